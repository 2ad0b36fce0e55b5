"""Rate-based routing driven by router capacity and imbalance prices.

Every ``tau`` seconds each channel updates its prices from the measured
arrival rates, and every sender reads the summed price of its paths and
moves each path rate by ``alpha * (1 - z_p)``.  Units are then paced out at
the path rate.  Probes read prices instantly; they are not delayed by the
network.
"""

from __future__ import annotations

import numpy as np

from ..fluid import project_onto_demand_set
from ..paths import path_set
from ..sim.channel import MILLI, RateEstimator
from .base import Pending, Scheme, SenderQueue, mtu_milli, packetize


def price_probe_step(rates, prices, alpha: float, demand: float, marginal: float = 1.0) -> np.ndarray:
    """One sender update: x <- Proj(x + alpha * (U'(x) - z))."""
    x = np.asarray(rates, float) + alpha * (marginal - np.asarray(prices, float))
    return project_onto_demand_set(x, demand)


class _Prices:
    def __init__(self, sim, delta, eta, kappa):
        self.sim = sim
        self.delta = delta
        self.eta = eta
        self.kappa = kappa
        self.lam = {key: 0.0 for key in sim.channels}
        self.mu = {}
        for (u, v) in sim.channels:
            self.mu[(u, v)] = self.mu[(v, u)] = 0.0

    def update(self, now):
        for (u, v), ch in self.sim.channels.items():
            xu = ch.stats.arrival(u, now)
            xv = ch.stats.arrival(v, now)
            scale = (ch.capacity / MILLI) / self.delta
            self.lam[(u, v)] = max(0.0, self.lam[(u, v)] + self.eta * (xu + xv - scale) / scale)
            self.mu[(u, v)] = max(0.0, self.mu[(u, v)] + self.kappa * (xu - xv) / scale)
            self.mu[(v, u)] = max(0.0, self.mu[(v, u)] + self.kappa * (xv - xu) / scale)

    def path_price(self, p) -> float:
        z = 0.0
        for a, b in zip(p, p[1:]):
            key = (a, b) if a < b else (b, a)
            z += 2 * self.lam[key] + self.mu[(a, b)] - self.mu[(b, a)]
        return z


class PriceFlow:
    def __init__(self, paths, tau):
        self.paths = list(paths)
        self.rates = np.zeros(len(self.paths))
        self.pending = SenderQueue()
        self.demand = RateEstimator(max(10 * tau, 1.0))
        self.pacing = [False] * len(self.paths)


class PriceProbe(Scheme):
    name = "priceprobe"
    queueing = True

    def __init__(self, mtu: float = 1.0, k: int = 4, path_type: str = "widest",
                 tau: float = 0.2, alpha: float = 0.1, eta: float = 0.5, kappa: float = 0.5,
                 delta: float = 0.5):
        self.mtu = mtu_milli(mtu)
        self.k = k
        self.path_type = path_type
        self.tau = tau
        self.alpha = alpha
        self.eta = eta
        self.kappa = kappa
        self.delta = delta
        self.flows: dict[tuple[int, int], PriceFlow] = {}

    def attach(self, sim):
        super().attach(sim)
        self.prices = _Prices(sim, self.delta, self.eta, self.kappa)
        sim.schedule(self.tau, "price-tick", self._tick)

    def _tick(self):
        sim = self.sim
        now = sim.now
        self.prices.update(now)
        for f in self.flows.values():
            z = [self.prices.path_price(p) for p in f.paths]
            f.rates = price_probe_step(f.rates, z, self.alpha, f.demand.value(now))
            for i in range(len(f.paths)):
                self._pace(f, i)
        # keep ticking while anything can still happen
        if len(sim.events) or any(len(f.pending) for f in self.flows.values()):
            sim.schedule(now + self.tau, "price-tick", self._tick)

    def flow(self, src, dst) -> PriceFlow:
        f = self.flows.get((src, dst))
        if f is None:
            paths = path_set(self.sim.topology, [(src, dst)], self.path_type, self.k)[(src, dst)]
            f = self.flows[(src, dst)] = PriceFlow(paths, self.tau)
        return f

    def on_transaction(self, txn, now):
        f = self.flow(txn.src, txn.dst)
        if not f.paths:
            txn.failed = True
            return
        f.demand.add(now, txn.amount / MILLI)
        f.pending.push_txn(txn, packetize(txn.amount, self.mtu))
        for i in range(len(f.paths)):
            self._pace(f, i)

    def _pace(self, f: PriceFlow, i: int):
        if f.pacing[i] or f.rates[i] <= 0 or not len(f.pending):
            return
        f.pacing[i] = True
        self._emit_unit(f, i)

    def _emit_unit(self, f: PriceFlow, i: int):
        sim = self.sim
        item = f.pending.pop()
        if item is None or f.rates[i] <= 0:
            if item is not None:
                f.pending.unpop(item)
            f.pacing[i] = False
            return
        unit = sim.new_unit(item.txn, item.amount, f.paths[i], i)
        sim.send(unit)
        gap = (item.amount / MILLI) / f.rates[i]
        sim.schedule(sim.now + gap, "pace", self._emit_unit, f, i)

    def on_fail(self, unit, now, reason, hop):
        f = self.flows[(unit.src, unit.dst)]
        txn = self.sim.txns[unit.txn]
        if not txn.done:
            f.pending.push(Pending(txn, unit.amount))
            for i in range(len(f.paths)):
                self._pace(f, i)
