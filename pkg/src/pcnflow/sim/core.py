"""Packet-switched payment network simulation.

Routing a unit over channel (u, v) locks the amount on u's side.  When the
unit reaches its destination an acknowledgement walks back along the route;
crossing a channel settles it, crediting the downstream side.  A drop,
rejection or cancellation sends a refund back instead, returning the locked
amount to the upstream side.  Freed or credited funds immediately service
the waiting queue of that side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

from ..errors import UnknownUnit
from ..graph import Topology, edge_key
from .channel import MILLI, ChannelState, TransactionUnit, mark_if_delayed, to_milli
from .engine import EventLog, EventQueue

FORWARDED, ENQUEUED, DROPPED, NO_FUNDS = "Forwarded", "Enqueued", "Dropped", "NoFunds"


@dataclass
class Transaction:
    id: int
    src: int
    dst: int
    amount: int  # milli-tokens
    arrival: float
    deadline: float
    delivered: int = 0
    completed_at: float | None = None
    expired: bool = False
    failed: bool = False
    live: dict[int, TransactionUnit] = field(default_factory=dict, repr=False)

    @property
    def done(self) -> bool:
        return self.completed_at is not None or self.expired or self.failed

    @property
    def succeeded(self) -> bool:
        return self.completed_at is not None and self.completed_at <= self.deadline


@dataclass
class RebalanceConfig:
    """Per-router on-chain rebalancing after every ``trigger`` tokens sent.

    ``equalize`` spreads the router's own-side balances evenly over its
    channels without adding funds.  ``replenish`` resets each own-side
    balance to its starting value with deposits or withdrawals.
    """

    trigger: float
    mode: str = "equalize"
    delay: float = 0.0

    def __post_init__(self):
        if not self.trigger > 0:
            raise ValueError("rebalance trigger must be positive")
        if self.mode not in ("equalize", "replenish"):
            raise ValueError(f"unknown rebalance mode {self.mode!r}")
        if self.delay < 0:
            raise ValueError("rebalance delay must be nonnegative")


@dataclass
class RebalanceRecord:
    time: float
    node: int
    moved: int  # total absolute balance change, milli-tokens
    injected: int  # net funds added (negative: withdrawn)


@dataclass
class SimConfig:
    policy: str = "LIFO"
    mark_threshold: float = 0.3
    queue_bound: float = 12_000.0  # tokens of queued value per direction
    stats_tau: float = 1.0
    rebalance: RebalanceConfig | None = None
    check_conservation: bool = False
    mark_on_backlog: bool = False


class ConservationError(AssertionError):
    pass


class Simulation:
    def __init__(self, topology: Topology, scheme, config: SimConfig | None = None,
                 log: bool | EventLog = False):
        self.topology = topology
        self.config = config or SimConfig()
        self.events = EventQueue()
        if isinstance(log, EventLog):
            self.log: EventLog | None = log
        else:
            self.log = EventLog() if log else None
        bound = to_milli(self.config.queue_bound)
        self.channels: dict[tuple[int, int], ChannelState] = {}
        for ch in topology.channels:
            self.channels[ch.key] = ChannelState(
                ch.u, ch.v, to_milli(ch.capacity), ch.delay, self.config.policy,
                bound, self.config.stats_tau,
            )
        self.txns: dict[int, Transaction] = {}
        self.units: dict[int, TransactionUnit] = {}
        self._unit_seq = 0
        self._feed: Iterator | None = None
        self.routed = {n: 0 for n in topology.nodes}
        self.rebalances: list[RebalanceRecord] = []
        self.delivered_units = 0
        self.dropped_units = 0
        self.scheme = scheme
        scheme.attach(self)

    # ---- plumbing ------------------------------------------------------

    @property
    def now(self) -> float:
        return self.events.now

    def schedule(self, t: float, kind: str, fn, *args) -> None:
        self.events.schedule(t, kind, fn, *args)

    def emit(self, kind: str, **fields) -> None:
        if self.log is not None:
            self.log.write(self.events.now, kind, **fields)

    def channel(self, u: int, v: int) -> ChannelState:
        return self.channels[edge_key(u, v)]

    def check_conservation(self) -> None:
        for key, ch in self.channels.items():
            if not ch.conserved():
                raise ConservationError(
                    f"channel {key} at t={self.now}: balances {ch.balance} inflight "
                    f"{ch.inflight} capacity {ch.capacity}"
                )

    def run_until(self, t_end: float) -> int:
        hook = self.check_conservation if self.config.check_conservation else None
        return self.events.run_until(t_end, hook)

    # ---- workload ------------------------------------------------------

    def add_transaction(self, txn: Transaction) -> None:
        self.schedule(txn.arrival, "txn", self._on_txn, txn)

    def feed(self, stream: Iterable[Transaction]) -> None:
        """Schedule arrivals lazily from a time-ordered stream."""
        self._feed = iter(stream)
        self._next_from_feed()

    def _next_from_feed(self):
        nxt = next(self._feed, None) if self._feed is not None else None
        if nxt is not None:
            self.schedule(nxt.arrival, "txn", self._on_txn, nxt, True)

    def _on_txn(self, txn: Transaction, from_feed: bool = False) -> None:
        self.txns[txn.id] = txn
        self.emit("txn", id=txn.id, src=txn.src, dst=txn.dst, amount=txn.amount)
        self.schedule(txn.deadline, "deadline", self._on_deadline, txn)
        if from_feed:
            self._next_from_feed()
        self.scheme.on_transaction(txn, self.now)

    def new_unit(self, txn: Transaction, amount: int, route, path_index: int = 0) -> TransactionUnit:
        self._unit_seq += 1
        unit = TransactionUnit(
            id=self._unit_seq, txn=txn.id, amount=amount, src=txn.src, dst=txn.dst,
            route=tuple(route), deadline=txn.deadline, path_index=path_index, state="sender",
        )
        return unit

    # ---- forwarding ----------------------------------------------------

    def send(self, unit: TransactionUnit, route=None, path_index: int | None = None) -> str:
        """Inject a unit at its source; returns the first-hop outcome."""
        if route is not None:
            unit.route = tuple(route)
        if path_index is not None:
            unit.path_index = path_index
        txn = self.txns[unit.txn]
        unit.hop = 0
        unit.marked = False
        unit.sent_at = self.now
        self.units[unit.id] = unit
        txn.live[unit.id] = unit
        self.emit("send", unit=unit.id, txn=unit.txn, route="-".join(map(str, unit.route)),
                  amount=unit.amount)
        return self.forward_unit(unit)

    def forward_unit(self, unit: TransactionUnit) -> str:
        """Try to push ``unit`` across the channel after its current hop."""
        k = unit.hop
        u, v = unit.route[k], unit.route[k + 1]
        ch = self.channel(u, v)
        now = self.now
        ch.stats.dirs[u].arrival.add(now, unit.amount / MILLI)
        q = ch.queue[u]
        if len(q) == 0 and ch.balance[u] >= unit.amount:
            self._transmit(ch, u, unit)
            return FORWARDED
        if not self.scheme.queueing:
            self.emit("nofunds", unit=unit.id, hop=k)
            self._start_refund(unit, "nofunds")
            return NO_FUNDS
        if q.total + unit.amount > ch.queue_bound:
            self.dropped_units += 1
            self.emit("drop", unit=unit.id, hop=k)
            self._start_refund(unit, "drop")
            return DROPPED
        q.push(unit, now)
        unit.state = "queued"
        self.emit("enqueue", unit=unit.id, hop=k, qlen=len(q))
        self.service_queue(ch, u)
        return ENQUEUED

    def _transmit(self, ch: ChannelState, side: int, unit: TransactionUnit) -> None:
        ch.lock(side, unit.amount)
        ch.stats.dirs[side].service.add(self.now, unit.amount / MILLI)
        unit.state = "flight"
        self.emit("fwd", unit=unit.id, hop=unit.hop, marked=int(unit.marked))
        self.schedule(self.now + ch.delay, "hop", self._arrive, unit)

    def service_queue(self, ch: ChannelState, side: int) -> list[TransactionUnit]:
        """Forward queued units in policy order while the balance covers the head."""
        q = ch.queue[side]
        sent = []
        while True:
            head = q.peek()
            if head is None or head.amount > ch.balance[side]:
                return sent
            q.pop()
            mark_if_delayed(head, head.queued_at, self.now, self.config.mark_threshold)
            if self.config.mark_on_backlog and q.oldest_wait(self.now) > self.config.mark_threshold:
                head.marked = True
            self._transmit(ch, side, head)
            sent.append(head)

    def _arrive(self, unit: TransactionUnit) -> None:
        unit.hop += 1
        node = unit.route[unit.hop]
        if node != unit.dst:
            self.forward_unit(unit)
            return
        txn = self.txns[unit.txn]
        if self.now > unit.deadline or txn.expired:
            self.emit("late", unit=unit.id)
            self._start_refund(unit, "late")
            return
        unit.state = "delivered"
        txn.delivered += unit.amount
        self.delivered_units += 1
        self.emit("deliver", unit=unit.id, txn=txn.id, marked=int(unit.marked))
        if txn.delivered == txn.amount and txn.completed_at is None:
            txn.completed_at = self.now
            self.emit("complete", txn=txn.id)
        self.deliver_ack(unit.id)

    def _delay(self, unit, k) -> float:
        return self.channel(unit.route[k], unit.route[k + 1]).delay

    # ---- acknowledgements and refunds ---------------------------------

    def _ack(self, unit: TransactionUnit, k: int) -> None:
        """Ack has crossed channel k back to route[k]: settle that channel."""
        payer, payee = unit.route[k], unit.route[k + 1]
        ch = self.channel(payer, payee)
        ch.settle(payer, unit.amount)
        self.emit("settle", unit=unit.id, hop=k)
        self.routed[payer] += unit.amount
        self.service_queue(ch, payee)
        self._maybe_rebalance(payer)
        if k > 0:
            self.schedule(self.now + self._delay(unit, k - 1), "ack", self._ack, unit, k - 1)
        else:
            unit.state = "acked"
            self.txns[unit.txn].live.pop(unit.id, None)
            self.units.pop(unit.id, None)
            self.scheme.on_ack(unit, self.now)

    def deliver_ack(self, unit_id: int) -> None:
        """Start the acknowledgement of a unit that reached its destination."""
        unit = self.units.get(unit_id)
        if unit is None or unit.state != "delivered":
            raise UnknownUnit(unit_id)
        k = unit.hop - 1
        self.schedule(self.now + self._delay(unit, k), "ack", self._ack, unit, k)

    def _start_refund(self, unit: TransactionUnit, reason: str) -> None:
        unit.state = "refunding"
        fail_hop = unit.hop
        if unit.hop == 0:
            self.schedule(self.now, "fail", self._failed_at_source, unit, reason, fail_hop)
        else:
            k = unit.hop - 1
            self.schedule(self.now + self._delay(unit, k), "refund", self._refund, unit, k,
                          reason, fail_hop)

    def _refund(self, unit: TransactionUnit, k: int, reason: str, fail_hop: int) -> None:
        payer = unit.route[k]
        ch = self.channel(payer, unit.route[k + 1])
        ch.refund(payer, unit.amount)
        self.emit("refund", unit=unit.id, hop=k)
        self.service_queue(ch, payer)
        if k > 0:
            self.schedule(self.now + self._delay(unit, k - 1), "refund", self._refund, unit,
                          k - 1, reason, fail_hop)
        else:
            self._failed_at_source(unit, reason, fail_hop)

    def _failed_at_source(self, unit, reason, fail_hop) -> None:
        unit.state = "failed"
        self.txns[unit.txn].live.pop(unit.id, None)
        self.units.pop(unit.id, None)
        self.emit("failed", unit=unit.id, reason=reason, hop=fail_hop)
        self.scheme.on_fail(unit, self.now, reason, fail_hop)

    # ---- deadlines -----------------------------------------------------

    def _on_deadline(self, txn: Transaction) -> None:
        if txn.completed_at is not None or txn.failed:
            return
        txn.expired = True
        self.emit("expire", txn=txn.id)
        self.cancel_transaction(txn)
        self.scheme.on_deadline(txn, self.now)

    def cancel_transaction(self, txn: Transaction) -> int:
        """Pull every queued unit of ``txn`` out of router queues.

        Each removed unit's locked funds are refunded hop by hop, and the
        sender hears about it as a cancellation.  Units already in flight or
        delivered are left alone.  Returns the number of units removed.
        """
        removed = 0
        for unit in sorted(txn.live.values(), key=lambda x: x.id):
            if unit.state != "queued":
                continue
            k = unit.hop
            ch = self.channel(unit.route[k], unit.route[k + 1])
            if ch.queue[unit.route[k]].remove(unit):
                removed += 1
                self.emit("cancel", unit=unit.id, hop=k)
                self._start_refund(unit, "cancel")
        return removed

    # ---- rebalancing ---------------------------------------------------

    def _maybe_rebalance(self, node: int) -> None:
        cfg = self.config.rebalance
        if cfg is None:
            return
        trig = to_milli(cfg.trigger)
        if self.routed[node] < trig:
            return
        self.routed[node] -= trig * (self.routed[node] // trig)
        if cfg.delay > 0:
            self.schedule(self.now + cfg.delay, "rebalance", self.rebalance_router, node)
        else:
            self.rebalance_router(node)

    def rebalance_router(self, node: int, mode: str | None = None) -> RebalanceRecord | None:
        """Reallocate ``node``'s own-side balances; logged as one on-chain transaction."""
        mode = mode or (self.config.rebalance.mode if self.config.rebalance else "equalize")
        nbrs = self.topology.neighbors(node)
        chans = [self.channel(node, w) for w in nbrs]
        if mode == "equalize":
            if len(chans) < 2:
                return None
            targets = equalized(ch.balance[node] for ch in chans)
        else:
            targets = [ch.initial[node] for ch in chans]
        moved = injected = 0
        for ch, target in zip(chans, targets):
            delta = target - ch.balance[node]
            if delta:
                ch.adjust(node, delta)
                moved += abs(delta)
                injected += delta
        if moved == 0:
            return None
        rec = RebalanceRecord(self.now, node, moved, injected)
        self.rebalances.append(rec)
        self.emit("rebalance", node=node, moved=moved, injected=injected)
        for ch in chans:
            self.service_queue(ch, node)
        return rec

    # ---- accounting ----------------------------------------------------

    def in_network(self) -> int:
        return sum(u.amount for t in self.txns.values() for u in t.live.values()
                   if u.state in ("flight", "queued", "refunding"))


def equalized(balances: Iterable[int]) -> list[int]:
    """Split the total as evenly as integers allow; earlier slots get the remainder."""
    bal = list(balances)
    total, n = sum(bal), len(bal)
    base, extra = divmod(total, n)
    return [base + (1 if i < extra else 0) for i in range(n)]

