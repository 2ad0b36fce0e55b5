"""Sender-side interface shared by every routing scheme."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from ..sim.channel import MILLI, TransactionUnit


def packetize(amount: int, mtu: int) -> list[int]:
    """Split ``amount`` milli-tokens into MTU-sized pieces plus a smaller tail."""
    if amount <= 0:
        raise ValueError("amount must be positive")
    if mtu <= 0:
        raise ValueError("MTU must be positive")
    full, tail = divmod(amount, mtu)
    return [mtu] * full + ([tail] if tail else [])


class Scheme:
    """Callbacks invoked by :class:`~pcnflow.sim.Simulation`.

    ``queueing`` tells the simulator whether routers may hold units that
    lack funds (packet-switched schemes) or must fail them at once (atomic
    schemes).
    """

    name = "base"
    queueing = True

    def attach(self, sim) -> None:
        self.sim = sim

    def on_transaction(self, txn, now: float) -> None:
        raise NotImplementedError

    def on_ack(self, unit: TransactionUnit, now: float) -> None:
        pass

    def on_fail(self, unit: TransactionUnit, now: float, reason: str, hop: int) -> None:
        pass

    def on_deadline(self, txn, now: float) -> None:
        pass


@dataclass
class Pending:
    """A unit waiting at its sender, not yet bound to a path."""

    txn: object
    amount: int


class SenderQueue:
    """Per-destination backlog served newest-first."""

    def __init__(self):
        self._items: deque[Pending] = deque()

    def push_txn(self, txn, amounts: list[int]) -> None:
        # reversed so the transaction's first piece is on top
        for a in reversed(amounts):
            self._items.append(Pending(txn, a))

    def push(self, item: Pending) -> None:
        self._items.append(item)

    def pop(self) -> Pending | None:
        while self._items:
            item = self._items.pop()
            if not item.txn.done:
                return item
        return None

    def unpop(self, item: Pending) -> None:
        self._items.append(item)

    def __len__(self):
        return sum(1 for it in self._items if not it.txn.done)

    def amount(self) -> int:
        return sum(it.amount for it in self._items if not it.txn.done)


def mtu_milli(mtu_tokens: float) -> int:
    return int(round(mtu_tokens * MILLI))
