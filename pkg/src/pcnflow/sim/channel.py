"""Channel state with integer milli-token balances and policy-ordered queues."""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

MILLI = 1000
POLICIES = ("LIFO", "FIFO", "EDF", "SPF")


def to_milli(tokens: float) -> int:
    return int(round(tokens * MILLI))


def to_tokens(milli: int) -> float:
    return milli / MILLI


@dataclass
class TransactionUnit:
    id: int
    txn: int
    amount: int  # milli-tokens
    src: int
    dst: int
    route: tuple[int, ...]
    deadline: float
    hop: int = 0
    marked: bool = False
    path_index: int = 0
    state: str = "new"
    sent_at: float = 0.0
    # set while the unit waits in a router queue
    queued_at: float = 0.0
    qentry: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError("unit amount must be positive")


def mark_if_delayed(unit: TransactionUnit, enqueue_time: float, now: float, threshold: float) -> bool:
    """Set the mark when queueing delay exceeds ``threshold``; marks are sticky."""
    if now < enqueue_time:
        raise ValueError("now precedes enqueue time")
    if now - enqueue_time > threshold:
        unit.marked = True
    return unit.marked


class UnitQueue:
    """Router queue for one channel direction.

    Entries live in a heap keyed by the scheduling policy; removal is lazy
    (the entry is flagged dead) so cancellation is O(1).
    """

    def __init__(self, policy: str = "LIFO"):
        if policy not in POLICIES:
            raise ValueError(f"unknown scheduling policy {policy!r}")
        self.policy = policy
        self._heap: list[list] = []
        self._arrivals: deque[list] = deque()  # entries in enqueue order
        self._seq = 0
        self.total = 0  # queued value, milli-tokens
        self.count = 0

    def _key(self, unit: TransactionUnit, seq: int):
        if self.policy == "LIFO":
            return (-seq,)
        if self.policy == "FIFO":
            return (seq,)
        if self.policy == "EDF":
            return (unit.deadline, seq)
        return (unit.amount, seq)

    def push(self, unit: TransactionUnit, now: float) -> None:
        seq = self._seq
        self._seq += 1
        entry = [self._key(unit, seq), seq, unit, True]
        heapq.heappush(self._heap, entry)
        self._arrivals.append(entry)
        unit.queued_at = now
        unit.qentry = entry
        self.total += unit.amount
        self.count += 1

    def _prune(self):
        while self._heap and not self._heap[0][3]:
            heapq.heappop(self._heap)

    def peek(self) -> TransactionUnit | None:
        self._prune()
        return self._heap[0][2] if self._heap else None

    def pop(self) -> TransactionUnit:
        self._prune()
        entry = heapq.heappop(self._heap)
        unit = entry[2]
        self._detach(unit, entry)
        return unit

    def remove(self, unit: TransactionUnit) -> bool:
        entry = unit.qentry
        if entry is None or not entry[3]:
            return False
        self._detach(unit, entry)
        return True

    def _detach(self, unit, entry):
        entry[3] = False
        unit.qentry = None
        self.total -= unit.amount
        self.count -= 1

    def oldest_wait(self, now: float) -> float:
        """How long the longest-waiting unit still queued has been here (0 if empty)."""
        arr = self._arrivals
        while arr and not arr[0][3]:
            arr.popleft()
        return now - arr[0][2].queued_at if arr else 0.0

    def __len__(self):
        return self.count

    def units(self) -> list[TransactionUnit]:
        return [e[2] for e in sorted(self._heap) if e[3]]


class RateEstimator:
    """Exponentially weighted rate of a stream of amounts (per second)."""

    __slots__ = ("tau", "_rate", "_t")

    def __init__(self, tau: float = 1.0):
        self.tau = tau
        self._rate = 0.0
        self._t = 0.0

    def add(self, t: float, amount: float) -> None:
        self._rate = self.value(t) + amount / self.tau
        self._t = t

    def value(self, t: float) -> float:
        if t <= self._t:
            return self._rate
        return self._rate * math.exp(-(t - self._t) / self.tau)


@dataclass
class DirectionStats:
    arrival: RateEstimator
    service: RateEstimator


class ChannelStats:
    """Per-direction arrival and service rate estimates for one channel."""

    def __init__(self, u: int, v: int, tau: float = 1.0):
        self.dirs = {
            u: DirectionStats(RateEstimator(tau), RateEstimator(tau)),
            v: DirectionStats(RateEstimator(tau), RateEstimator(tau)),
        }

    def arrival(self, side: int, t: float) -> float:
        return self.dirs[side].arrival.value(t)

    def service(self, side: int, t: float) -> float:
        return self.dirs[side].service.value(t)


def estimate_channel_demand(
    arrival: tuple[float, float], service: tuple[float, float], inflight: tuple[float, float]
) -> tuple[float, float]:
    """Funds each side needs to sustain its arrival rate (Little's law).

    m = arrival * inflight / service per side, or ``math.inf`` when the side
    has served nothing yet.
    """
    out = []
    for x, y, i in zip(arrival, service, inflight):
        out.append(x * i / y if y > 0 else math.inf)
    return out[0], out[1]


class ChannelState:
    """Balances, in-flight funds and queues of one channel, in milli-tokens."""

    def __init__(self, u: int, v: int, capacity: int, delay: float, policy: str = "LIFO",
                 queue_bound: int = 12_000 * MILLI, stats_tau: float = 1.0,
                 balance_u: int | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.u, self.v = u, v
        self.capacity = capacity
        self.delay = delay
        bu = capacity // 2 if balance_u is None else balance_u
        self.balance = {u: bu, v: capacity - bu}
        self.inflight = {u: 0, v: 0}
        self.queue = {u: UnitQueue(policy), v: UnitQueue(policy)}
        self.queue_bound = queue_bound
        self.stats = ChannelStats(u, v, stats_tau)
        self.initial = dict(self.balance)

    def other(self, side: int) -> int:
        return self.v if side == self.u else self.u

    def conserved(self) -> bool:
        b, i = self.balance, self.inflight
        return (
            b[self.u] + b[self.v] + i[self.u] + i[self.v] == self.capacity
            and min(b[self.u], b[self.v], i[self.u], i[self.v]) >= 0
        )

    def lock(self, side: int, amount: int) -> None:
        """Move funds from ``side``'s balance into flight."""
        assert self.balance[side] >= amount
        self.balance[side] -= amount
        self.inflight[side] += amount

    def settle(self, side: int, amount: int) -> None:
        """In-flight funds sent by ``side`` arrive at the other end."""
        assert self.inflight[side] >= amount
        self.inflight[side] -= amount
        self.balance[self.other(side)] += amount

    def refund(self, side: int, amount: int) -> None:
        assert self.inflight[side] >= amount
        self.inflight[side] -= amount
        self.balance[side] += amount

    def adjust(self, side: int, delta: int) -> None:
        """On-chain deposit (delta > 0) or withdrawal on ``side``; capacity follows."""
        assert self.balance[side] + delta >= 0
        self.balance[side] += delta
        self.capacity += delta
