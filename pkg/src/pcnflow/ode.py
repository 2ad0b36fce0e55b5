"""Fluid-flow model of window-based multipath rate control with delay marking.

State per path: rate x_p.  State per channel direction (u, v): queue q_uv
at router u and marking fraction f_uv.  Rates grow in proportion to their
share of the pair's total rate and shrink with the marked fraction; queues
fill at (arrival - service); marking rises while the queue exceeds
``q_thresh``.  Service on a channel is symmetric and limited to c / (2 delta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyPathSet, StepSizeTooLarge
from .fluid import project_onto_demand_set
from .graph import Pair, Path, Topology, edge_key, path_edges
from .lp import LpSolution


@dataclass
class FluidState:
    t: float
    x: dict[Path, float]
    q: dict[Pair, float]
    f: dict[Pair, float]
    y: dict[Pair, float] = field(default_factory=dict)


@dataclass
class Trajectory:
    states: list[FluidState]
    q_thresh: float
    dt: float
    delta: float

    def steady_state(self, tail: float = 0.5) -> FluidState:
        """Average over the last ``tail`` fraction of the recorded states.

        The marking loop is a chain of integrators, so the trajectory settles
        into a bounded oscillation around the equilibrium rather than onto
        it.  Rates, queues and service rates are plain time averages.  A
        marking fraction is averaged with weight equal to the arrival rate at
        that queue, giving the long-run share of arriving traffic marked.
        """
        k = max(1, int(len(self.states) * tail))
        part = self.states[-k:]

        def mean(attr):
            keys = getattr(part[0], attr).keys()
            return {key: float(np.mean([getattr(s, attr)[key] for s in part])) for key in keys}

        arrivals = [_arrivals(s.x) for s in part]
        f = {}
        for d in part[0].f:
            w = np.array([a.get(d, 0.0) for a in arrivals])
            vals = np.array([s.f[d] for s in part])
            f[d] = float((w * vals).sum() / w.sum()) if w.sum() > 0 else float(vals.mean())
        return FluidState(part[-1].t, mean("x"), mean("q"), f, mean("y"))


def _arrivals(x: Mapping[Path, float]) -> dict[Pair, float]:
    out: dict[Pair, float] = {}
    for p, r in x.items():
        for h in path_edges(p):
            out[h] = out.get(h, 0.0) + r
    return out


class _Net:
    def __init__(self, topology, demand, paths, delta):
        self.paths: list[Path] = []
        self.groups = []
        self.caps = []
        for pair in sorted(demand):
            ps = [tuple(p) for p in paths.get(pair, ())]
            if not ps:
                raise EmptyPathSet(pair)
            s = len(self.paths)
            self.paths.extend(ps)
            self.groups.append((s, len(self.paths)))
            self.caps.append(demand[pair])
        used = sorted({edge_key(u, v) for p in self.paths for u, v in path_edges(p)})
        self.chans = used
        idx = {k: n for n, k in enumerate(used)}
        self.dirs: list[Pair] = []
        for u, v in used:
            self.dirs += [(u, v), (v, u)]
        self.inc = np.zeros((2 * len(used), len(self.paths)))
        for k, p in enumerate(self.paths):
            for u, v in path_edges(p):
                self.inc[2 * idx[edge_key(u, v)] + (0 if u < v else 1), k] = 1.0
        self.half_cap = np.array([topology.capacity(*k) / (2 * delta) for k in used])
        self.group_of = np.zeros(len(self.paths), dtype=int)
        for g, (s, e) in enumerate(self.groups):
            self.group_of[s:e] = g


def service_rates(xd: np.ndarray, q: np.ndarray, half_cap: np.ndarray) -> np.ndarray:
    """Symmetric per-channel service rate from the four queue-occupancy cases."""
    xf, xr = xd[0::2], xd[1::2]
    qf, qr = q[0::2] > 0, q[1::2] > 0
    y = np.where(
        qf & qr,
        half_cap,
        np.where(
            qf,
            np.minimum(half_cap, xr),
            np.where(qr, np.minimum(half_cap, xf), np.minimum(half_cap, np.minimum(xf, xr))),
        ),
    )
    out = np.empty_like(xd)
    out[0::2] = y
    out[1::2] = y
    return out


def integrate_fluid_spider(
    topology: Topology,
    demand: Mapping[Pair, float],
    paths: Mapping[Pair, Sequence[Path]],
    delta: float,
    horizon: float,
    dt: float | None = None,
    q_thresh: float = 1.0,
    init: FluidState | None = None,
    record_every: int = 10,
    tol: float = 1e-6,
    mark_gain: float = 1.0,
) -> Trajectory:
    """Forward-Euler integration of the fluid model.

    ``demand`` caps each pair's total rate (``math.inf`` for none); after
    each step the pair's rates are projected back under the cap.  Queues and
    rates are clipped at zero and marking fractions at [0, 1].  A step that
    pushes a path rate below zero by more than ``tol`` relative means ``dt``
    is too coarse for the marking level reached.
    """
    if dt is None:
        dt = delta / 100
    if not (dt > 0 and horizon > 0 and delta > 0):
        raise ValueError("dt, horizon and delta must be positive")
    net = _Net(topology, demand, paths, delta)
    npaths, nd = len(net.paths), len(net.dirs)
    if init is None:
        x = np.ones(npaths)
        q = np.zeros(nd)
        f = np.zeros(nd)
    else:
        x = np.array([init.x.get(p, 0.0) for p in net.paths], dtype=float)
        q = np.array([init.q.get(d, 0.0) for d in net.dirs], dtype=float)
        f = np.array([init.f.get(d, 0.0) for d in net.dirs], dtype=float)
    for (s, e), d in zip(net.groups, net.caps):
        x[s:e] = project_onto_demand_set(x[s:e], d)
    ngroups = len(net.groups)

    def snapshot(t, y):
        return FluidState(
            t,
            {p: float(v) for p, v in zip(net.paths, x)},
            {d: float(v) for d, v in zip(net.dirs, q)},
            {d: float(v) for d, v in zip(net.dirs, f)},
            {d: float(v) for d, v in zip(net.dirs, y)},
        )

    xd = net.inc @ x
    states = [snapshot(0.0, service_rates(xd, q, net.half_cap))]
    steps = int(math.ceil(horizon / dt))
    for n in range(1, steps + 1):
        xd = net.inc @ x
        y = service_rates(xd, q, net.half_cap)
        totals = np.bincount(net.group_of, weights=x, minlength=ngroups)
        counts = np.bincount(net.group_of, minlength=ngroups)
        tot = totals[net.group_of]
        share = np.where(tot > 0, x / np.where(tot > 0, tot, 1.0), 1.0 / counts[net.group_of])
        marked = net.inc.T @ f
        dx = share - marked * x
        dx = np.where((x <= 0) & (dx < 0), 0.0, dx)
        dq = xd - y
        dq = np.where((q <= 0) & (dq < 0), 0.0, dq)
        df = mark_gain * (q - q_thresh)
        df = np.where((f <= 0) & (df < 0), 0.0, df)
        x_new, q_new, f_new = x + dt * dx, q + dt * dq, f + dt * df
        # x_new = x (1 - dt * marked) + dt * share goes negative only when
        # dt * marked > 1; queues and fractions overshooting zero inside a
        # step is ordinary clipping
        worst = x_new.min(initial=0.0)
        if worst < -tol * max(1.0, float(x.max(initial=0.0))):
            raise StepSizeTooLarge(f"path rate fell to {worst:.3g} at t={n * dt:.4g}; reduce dt")
        x = np.maximum(x_new, 0.0)
        for (s, e), d in zip(net.groups, net.caps):
            if math.isfinite(d):
                x[s:e] = project_onto_demand_set(x[s:e], d)
        q = np.maximum(q_new, 0.0)
        f = np.clip(f_new, 0.0, 1.0)
        if n % record_every == 0 or n == steps:
            states.append(snapshot(n * dt, y))
    return Trajectory(states, q_thresh, dt, delta)


@dataclass
class KktReport:
    lam: dict[Pair, float]
    mu: dict[Pair, float]
    capacity_residual: float
    balance_residual: float
    stationarity_residual: float
    slackness_residual: float
    throughput: float
    lp_throughput: float
    throughput_error: float
    channel_rate_error: float

    @property
    def max_residual(self) -> float:
        return max(
            self.capacity_residual,
            self.balance_residual,
            self.stationarity_residual,
            self.slackness_residual,
        )


def check_kkt_parallel(
    steady: FluidState,
    lp: LpSolution,
    topology: Topology,
    delta: float,
) -> KktReport:
    """Map steady marking fractions to prices and measure optimality residuals.

    Prices: lam_uv = (f_uv + f_vu) / 2 and mu_uv = f_uv / 2, so a path's
    price lam + mu_uv - mu_vu summed over its hops equals its summed marking
    fraction.  Stationarity is tested against the rate-increase law, whose
    marginal value for a path is 1 / (pair total rate).  All residuals are
    relative: capacity and balance to c / delta, stationarity to the pair's
    marginal value, slackness to c / delta weighted by lam / max(lam).  Rates are compared with
    the LP optimum on total throughput and per-direction channel load.
    """
    lam: dict[Pair, float] = {}
    mu: dict[Pair, float] = {}
    for (u, v), fu in steady.f.items():
        fv = steady.f.get((v, u), 0.0)
        lam[edge_key(u, v)] = (fu + fv) / 2
        mu[(u, v)] = fu / 2
    load: dict[Pair, float] = {}
    for p, r in steady.x.items():
        for h in path_edges(p):
            load[h] = load.get(h, 0.0) + r
    cap_res = bal_res = slack_res = 0.0
    lam_max = max(lam.values(), default=0.0)
    for key in lam:
        u, v = key
        cap = topology.capacity(u, v) / delta
        fw, rv = load.get((u, v), 0.0), load.get((v, u), 0.0)
        cap_res = max(cap_res, max(0.0, fw + rv - cap) / cap)
        bal_res = max(bal_res, abs(fw - rv) / cap)
        if lam_max > 0:
            slack_res = max(slack_res, lam[key] / lam_max * abs(cap - fw - rv) / cap)
    pair_tot: dict[Pair, float] = {}
    for p, r in steady.x.items():
        pair_tot[(p[0], p[-1])] = pair_tot.get((p[0], p[-1]), 0.0) + r
    stat_res = 0.0
    for p, r in steady.x.items():
        tot = pair_tot[(p[0], p[-1])]
        if tot <= 0:
            continue
        marginal = 1.0 / tot
        price = sum(lam[edge_key(u, v)] + mu[(u, v)] - mu[(v, u)] for u, v in path_edges(p))
        gap = (marginal - price) / marginal
        # active paths need equality, idle paths only need price >= marginal
        stat_res = max(stat_res, abs(gap) if r > 1e-9 * tot else max(0.0, gap))
    tput = sum(steady.x.values())
    lp_tput = sum(lp.rates.values())
    lp_load: dict[Pair, float] = {}
    for p, r in lp.rates.items():
        for h in path_edges(p):
            lp_load[h] = lp_load.get(h, 0.0) + r
    rate_err = 0.0
    for h in set(load) | set(lp_load):
        cap = topology.capacity(*h) / delta
        rate_err = max(rate_err, abs(load.get(h, 0.0) - lp_load.get(h, 0.0)) / cap)
    return KktReport(
        lam=lam,
        mu=mu,
        capacity_residual=cap_res,
        balance_residual=bal_res,
        stationarity_residual=stat_res,
        slackness_residual=slack_res,
        throughput=tput,
        lp_throughput=lp_tput,
        throughput_error=abs(tput - lp_tput) / max(lp_tput, 1e-12),
        channel_rate_error=rate_err,
    )


def parallel_network(capacities: Sequence[float], delay: float = 0.1, access: float = 1e9):
    """Two end hosts joined through ``k`` parallel router channels.

    Returns ``(topology, paths)`` with node 0 on the left, node 1 on the
    right and, for channel n, routers 2n+2 (left) and 2n+3 (right).  The
    access links have capacity ``access`` so that only the parallel
    channels constrain the rates.
    """
    chans = []
    fwd, rev = [], []
    for n, c in enumerate(capacities):
        r, s = 2 * n + 2, 2 * n + 3
        chans += [(0, r, access, delay), (r, s, c, delay), (s, 1, access, delay)]
        fwd.append((0, r, s, 1))
        rev.append((1, s, r, 0))
    return Topology.from_edges(chans), {(0, 1): fwd, (1, 0): rev}
