"""Decentralised primal-dual iteration for the balance-constrained throughput LP.

Each path source adjusts its rate against the summed channel prices along the
path; each channel adjusts a capacity price and two imbalance prices from its
own measurements.  Rebalancing rates follow their own price when on-chain
rebalancing is allowed (``gamma`` is not None).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyPathSet, NotConverged
from .fluid import project_onto_demand_set
from .graph import Pair, Path, Topology, edge_key, path_edges


@dataclass
class Steps:
    alpha: float = 0.2
    beta: float = 0.2
    eta: float = 0.2  # divided by each channel's capacity
    kappa: float = 0.2  # likewise

    def __post_init__(self):
        for k in ("alpha", "beta", "eta", "kappa"):
            if not getattr(self, k) > 0:
                raise ValueError(f"step size {k} must be positive")


@dataclass
class PriceState:
    """Channel-side state.  ``lam`` is keyed by channel, ``mu``/``b`` by direction."""

    lam: dict[Pair, float]
    mu: dict[Pair, float]
    b: dict[Pair, float]
    steps: Steps

    def min_dual(self) -> float:
        return min(list(self.lam.values()) + list(self.mu.values()) + [0.0])

    def hop_price(self, u: int, v: int) -> float:
        return 2 * self.lam[edge_key(u, v)] + self.mu[(u, v)] - self.mu[(v, u)]

    def path_price(self, path: Path) -> float:
        return sum(self.hop_price(u, v) for u, v in path_edges(path))


@dataclass
class TracePoint:
    it: int
    throughput: float
    objective: float
    violation: float
    change: float
    min_dual: float


@dataclass
class PrimalDualResult:
    flows: dict[Path, float]
    prices: PriceState
    trace: list[TracePoint]
    converged: bool
    iterations: int
    throughput: float
    objective: float
    last_flows: dict[Path, float] = field(default_factory=dict)


class _Problem:
    def __init__(self, topology, demand, paths, delta):
        self.chans = [c.key for c in topology.channels]
        self.cidx = {k: n for n, k in enumerate(self.chans)}
        plist, groups, caps = [], [], []
        for pair in sorted(demand):
            ps = [tuple(p) for p in paths.get(pair, ())]
            if not ps:
                raise EmptyPathSet(pair)
            start = len(plist)
            plist.extend(ps)
            groups.append((start, len(plist)))
            caps.append(demand[pair])
        self.paths = plist
        self.groups = groups
        self.dcap = caps
        nd = 2 * len(self.chans)
        inc = np.zeros((nd, len(plist)))
        for k, p in enumerate(plist):
            for u, v in path_edges(p):
                e = self.cidx[edge_key(u, v)]
                inc[2 * e + (0 if u < v else 1), k] += 1.0
        self.inc = inc
        self.cap_rate = np.array([topology.capacity(*k) / delta for k in self.chans])
        self.cap = np.array([topology.capacity(*k) for k in self.chans])

    def dir_flows(self, x):
        f = self.inc @ x
        return f[0::2], f[1::2]

    def violation(self, x, b):
        fwd, rev = self.dir_flows(x)
        over = np.maximum(fwd + rev - self.cap_rate, 0.0)
        imb_f = np.maximum(fwd - rev - b[0::2], 0.0)
        imb_r = np.maximum(rev - fwd - b[1::2], 0.0)
        worst = max(over.max(initial=0.0), imb_f.max(initial=0.0), imb_r.max(initial=0.0))
        for (s, e), d in zip(self.groups, self.dcap):
            if math.isfinite(d):
                worst = max(worst, x[s:e].sum() - d)
        return worst


def run_primal_dual(
    topology: Topology,
    demand: Mapping[Pair, float],
    paths: Mapping[Pair, Sequence[Path]],
    delta: float,
    gamma: float | None = None,
    steps: Steps | None = None,
    max_iters: int = 50_000,
    tol: float = 1e-5,
    violation_tol: float = 1e-4,
    patience: int = 50,
    raise_on_failure: bool = True,
    extrapolate: bool = True,
    average: bool = False,
) -> PrimalDualResult:
    """Iterate the primal and dual updates until the rates settle.

    Sources take a projected gradient step on ``1 - z_p``; rebalancing rates
    step on ``mu - gamma``; channels raise ``lam`` on excess load and ``mu``
    on imbalance not covered by ``b``, all clipped at zero.

    With ``extrapolate`` (the default) the channels measure the extrapolated
    point ``2 x(t) - x(t-1)`` instead of ``x(t)``.  Without it the iterates
    orbit the saddle point of the linear objective indefinitely; with it the
    last iterate converges.  ``average=True`` reports the running mean of the
    iterates instead, which also converges but only at rate 1/t.

    Converged means the reported (x, b) moved by less than ``tol`` relative
    for ``patience`` consecutive iterations while violating no constraint by
    more than ``violation_tol`` (relative to the largest ``c / delta``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if gamma is not None and gamma < 0:
        raise ValueError("gamma must be nonnegative")
    steps = steps or Steps()
    prob = _Problem(topology, demand, paths, delta)
    n = len(prob.paths)
    nc = len(prob.chans)
    x = np.zeros(n)
    lam = np.zeros(nc)
    mu = np.zeros(2 * nc)
    b = np.zeros(2 * nc)
    eta = steps.eta / prob.cap
    kappa = steps.kappa / prob.cap
    avg_x = np.zeros(n)
    avg_b = np.zeros(2 * nc)
    rep_x, rep_b = x, b
    trace: list[TracePoint] = []
    quiet = 0
    converged = False
    it = 0
    scale = max(1.0, float(prob.cap_rate.max(initial=1.0)))

    for it in range(1, max_iters + 1):
        # path prices from current duals
        zf = 2 * lam + mu[0::2] - mu[1::2]
        zr = 2 * lam + mu[1::2] - mu[0::2]
        zdir = np.empty(2 * nc)
        zdir[0::2], zdir[1::2] = zf, zr
        zp = prob.inc.T @ zdir
        x_new = x + steps.alpha * (1.0 - zp)
        for (s, e), d in zip(prob.groups, prob.dcap):
            x_new[s:e] = project_onto_demand_set(x_new[s:e], d)
        b_new = np.maximum(b + steps.beta * (mu - gamma), 0.0) if gamma is not None else b
        if extrapolate:
            xs, bs = 2 * x_new - x, 2 * b_new - b
        else:
            xs, bs = x_new, b_new
        x, b = x_new, b_new
        fwd, rev = prob.dir_flows(xs)
        lam = np.maximum(lam + eta * (fwd + rev - prob.cap_rate), 0.0)
        mu_f = np.maximum(mu[0::2] + kappa * (fwd - rev - bs[0::2]), 0.0)
        mu_r = np.maximum(mu[1::2] + kappa * (rev - fwd - bs[1::2]), 0.0)
        mu[0::2], mu[1::2] = mu_f, mu_r

        prev = np.concatenate([rep_x, rep_b])
        avg_x += (x - avg_x) / it
        avg_b += (b - avg_b) / it
        rep_x, rep_b = (avg_x, avg_b) if average else (x, b)
        cur = np.concatenate([rep_x, rep_b])
        change = float(np.abs(cur - prev).sum() / max(np.abs(cur).sum(), 1e-12))
        viol = prob.violation(rep_x, rep_b) / scale
        tput = float(rep_x.sum())
        obj = tput - (gamma or 0.0) * float(rep_b.sum())
        trace.append(TracePoint(it, tput, obj, viol, change, float(min(lam.min(initial=0), mu.min(initial=0)))))
        quiet = quiet + 1 if change < tol else 0
        if quiet >= patience and viol < violation_tol:
            converged = True
            break

    state = PriceState(
        lam={k: float(lam[e]) for e, k in enumerate(prob.chans)},
        mu=_per_dir(prob.chans, mu),
        b=_per_dir(prob.chans, rep_b),
        steps=steps,
    )
    flows = {p: float(r) for p, r in zip(prob.paths, rep_x)}
    result = PrimalDualResult(
        flows=flows,
        prices=state,
        trace=trace,
        converged=converged,
        iterations=it,
        throughput=float(rep_x.sum()),
        objective=trace[-1].objective if trace else 0.0,
        last_flows={p: float(r) for p, r in zip(prob.paths, x)},
    )
    if not converged and raise_on_failure:
        raise NotConverged(f"no convergence after {it} iterations", trace, result)
    return result


def _per_dir(chans, arr) -> dict[Pair, float]:
    out = {}
    for e, (u, v) in enumerate(chans):
        out[(u, v)] = float(arr[2 * e])
        out[(v, u)] = float(arr[2 * e + 1])
    return out
