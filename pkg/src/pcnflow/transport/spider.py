"""Windowed multipath transport with delay-marking feedback."""

from __future__ import annotations

from ..errors import UnknownAck
from ..paths import path_set
from ..sim.channel import MILLI
from .base import Pending, Scheme, SenderQueue, mtu_milli, packetize


class SpiderFlow:
    """Window state of one (sender, destination) pair.

    Windows are in tokens, in-flight amounts in milli-tokens.  A unit may be
    sent on path p only if in-flight(p) + amount <= w_p; eligible paths are
    tried round-robin starting after the last one used.
    """

    def __init__(self, paths, w_init: float = 10.0, w_min: float = 1.0,
                 alpha: float = 10.0, beta: float = 0.1, grow_when_limited: bool = False):
        if w_min <= 0:
            raise ValueError("w_min must be positive")
        self.paths = list(paths)
        self.windows = [max(w_init, w_min)] * len(self.paths)
        self.inflight = [0] * len(self.paths)
        self.w_min = w_min
        self.alpha = alpha
        self.beta = beta
        self.rr = 0
        self.pending = SenderQueue()
        self.outstanding: dict[int, tuple[int, int, bool]] = {}
        self.grow_when_limited = grow_when_limited

    def choose(self, amount: int) -> int | None:
        k = len(self.paths)
        for off in range(k):
            p = (self.rr + off) % k
            if self.inflight[p] + amount <= self.windows[p] * MILLI:
                return p
        return None

    def record_send(self, unit_id: int, p: int, amount: int) -> None:
        self.inflight[p] += amount
        # the window was the binding limit if another unit this size would not fit
        limited = self.inflight[p] + amount > self.windows[p] * MILLI
        self.outstanding[unit_id] = (p, amount, limited)
        self.rr = (p + 1) % len(self.paths)

    def on_ack(self, unit_id: int, marked: bool) -> int:
        """Apply the window rule for one acknowledgement; returns the path index."""
        try:
            p, amount, limited = self.outstanding.pop(unit_id)
        except KeyError:
            raise UnknownAck(unit_id) from None
        self.inflight[p] -= amount
        if marked:
            self.windows[p] = max(self.w_min, self.windows[p] - self.beta)
        elif limited or not self.grow_when_limited:
            self.windows[p] += self.alpha / sum(self.windows)
        return p


class Spider(Scheme):
    name = "spider"
    queueing = True

    def __init__(self, mtu: float = 1.0, k: int = 4, path_type: str = "widest",
                 alpha: float = 10.0, beta: float = 0.1, w_init: float = 10.0,
                 w_min: float | None = None, grow_when_limited: bool = False):
        self.mtu = mtu_milli(mtu)
        self.k = k
        self.path_type = path_type
        self.alpha = alpha
        self.beta = beta
        self.w_init = w_init
        self.w_min = mtu if w_min is None else w_min
        self.grow_when_limited = grow_when_limited
        self.flows: dict[tuple[int, int], SpiderFlow] = {}

    def flow(self, src: int, dst: int) -> SpiderFlow:
        f = self.flows.get((src, dst))
        if f is None:
            paths = path_set(self.sim.topology, [(src, dst)], self.path_type, self.k)[(src, dst)]
            f = SpiderFlow(paths, self.w_init, self.w_min, self.alpha, self.beta,
                           self.grow_when_limited)
            self.flows[(src, dst)] = f
        return f

    def on_transaction(self, txn, now):
        f = self.flow(txn.src, txn.dst)
        if not f.paths:
            txn.failed = True
            return
        f.pending.push_txn(txn, packetize(txn.amount, self.mtu))
        self.drain(f)

    def drain(self, f: SpiderFlow) -> None:
        sim = self.sim
        while True:
            item = f.pending.pop()
            if item is None:
                return
            p = f.choose(item.amount)
            if p is None:
                f.pending.unpop(item)
                return
            unit = sim.new_unit(item.txn, item.amount, f.paths[p], p)
            f.record_send(unit.id, p, item.amount)
            sim.send(unit)

    def on_ack(self, unit, now):
        f = self.flows[(unit.src, unit.dst)]
        f.on_ack(unit.id, unit.marked)
        self.drain(f)

    def on_fail(self, unit, now, reason, hop):
        f = self.flows[(unit.src, unit.dst)]
        # cancelled, dropped and late units all count as marked
        f.on_ack(unit.id, marked=True)
        txn = self.sim.txns[unit.txn]
        if not txn.done:
            f.pending.push(Pending(txn, unit.amount))
        self.drain(f)
