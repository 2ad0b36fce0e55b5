"""Send each unit on the path with the most probed spare balance."""

from __future__ import annotations

from ..paths import path_set
from .base import Pending, Scheme, SenderQueue, mtu_milli, packetize


def waterfilling_select(available) -> int | None:
    """Index of the largest positive entry (lowest index on ties), else None."""
    best, best_val = None, 0
    for i, a in enumerate(available):
        if a > best_val:
            best, best_val = i, a
    return best


class WaterfillingFlow:
    def __init__(self, paths):
        self.paths = list(paths)
        k = len(self.paths)
        self.bottleneck: list[int | None] = [None] * k  # milli-tokens, None until probed
        self.inflight = [0] * k
        self.probing = [False] * k
        self.pending = SenderQueue()
        self.outstanding: dict[int, tuple[int, int]] = {}

    def probed(self) -> bool:
        return all(b is not None for b in self.bottleneck)

    def available(self) -> list[int]:
        return [(b or 0) - f for b, f in zip(self.bottleneck, self.inflight)]


class Waterfilling(Scheme):
    """Periodic probes read the minimum sending-side balance along each path.

    A probe travels the path, reads the balances when it turns around at the
    destination and reports back after the full round trip.  At most one
    probe per path is outstanding.  Senders that cannot place a unit wait for
    the next probe result.
    """

    name = "waterfilling"
    queueing = True

    def __init__(self, mtu: float = 1.0, k: int = 4, path_type: str = "widest",
                 probe_period: float = 0.2):
        if probe_period <= 0:
            raise ValueError("probe period must be positive")
        self.mtu = mtu_milli(mtu)
        self.k = k
        self.path_type = path_type
        self.probe_period = probe_period
        self.flows: dict[tuple[int, int], WaterfillingFlow] = {}
        self._ticking: set[tuple[int, int]] = set()

    def flow(self, src, dst) -> WaterfillingFlow:
        f = self.flows.get((src, dst))
        if f is None:
            paths = path_set(self.sim.topology, [(src, dst)], self.path_type, self.k)[(src, dst)]
            f = self.flows[(src, dst)] = WaterfillingFlow(paths)
        return f

    # probing ------------------------------------------------------------

    def _tick(self, pair):
        f = self.flows[pair]
        if not len(f.pending) and not f.outstanding:
            self._ticking.discard(pair)
            return
        self._probe_all(f)
        self.sim.schedule(self.sim.now + self.probe_period, "probe-tick", self._tick, pair)

    def _probe_all(self, f: WaterfillingFlow):
        topo, sim = self.sim.topology, self.sim
        for i, p in enumerate(f.paths):
            if f.probing[i]:
                continue
            f.probing[i] = True
            sim.schedule(sim.now + topo.path_delay(p), "probe-turn", self._turnaround, f, i)

    def _turnaround(self, f: WaterfillingFlow, i: int):
        p = f.paths[i]
        sim = self.sim
        b = min(sim.channel(p[h], p[h + 1]).balance[p[h]] for h in range(len(p) - 1))
        sim.schedule(sim.now + sim.topology.path_delay(p), "probe-back", self._probe_back, f, i, b)

    def _probe_back(self, f: WaterfillingFlow, i: int, bottleneck: int):
        f.probing[i] = False
        f.bottleneck[i] = bottleneck
        self.drain(f)

    # sending ------------------------------------------------------------

    def on_transaction(self, txn, now):
        f = self.flow(txn.src, txn.dst)
        if not f.paths:
            txn.failed = True
            return
        f.pending.push_txn(txn, packetize(txn.amount, self.mtu))
        pair = (txn.src, txn.dst)
        if pair not in self._ticking:
            self._ticking.add(pair)
            self._tick(pair)
        self.drain(f)

    def drain(self, f: WaterfillingFlow):
        if not f.probed():
            return
        sim = self.sim
        while True:
            item = f.pending.pop()
            if item is None:
                return
            p = waterfilling_select(f.available())
            if p is None:
                f.pending.unpop(item)
                return
            unit = sim.new_unit(item.txn, item.amount, f.paths[p], p)
            f.inflight[p] += item.amount
            f.outstanding[unit.id] = (p, item.amount)
            sim.send(unit)

    def _finish(self, unit):
        f = self.flows[(unit.src, unit.dst)]
        p, amount = f.outstanding.pop(unit.id)
        f.inflight[p] -= amount
        return f

    def on_ack(self, unit, now):
        self._finish(unit)

    def on_fail(self, unit, now, reason, hop):
        f = self._finish(unit)
        txn = self.sim.txns[unit.txn]
        if not txn.done:
            f.pending.push(Pending(txn, unit.amount))
