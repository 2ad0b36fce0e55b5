"""Deterministic event queue with an optional text event log."""

from __future__ import annotations

import heapq
import io
from typing import Any, Callable


class EventQueue:
    """Min-heap of events ordered by (time, insertion sequence)."""

    def __init__(self):
        self._heap: list[tuple[float, int, str, Callable, tuple]] = []
        self._seq = 0
        self.now = 0.0
        self.processed = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: str, fn: Callable, *args: Any) -> int:
        if time < self.now:
            raise ValueError(f"cannot schedule {kind} at {time} before now={self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (time, seq, kind, fn, args))
        return seq

    def peek_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def pop(self):
        time, seq, kind, fn, args = heapq.heappop(self._heap)
        self.now = time
        self.processed += 1
        return time, seq, kind, fn, args

    def run_until(self, t_end: float, after_event: Callable[[], None] | None = None) -> int:
        """Process every event with time <= t_end; returns the number handled."""
        if t_end < self.now:
            raise ValueError("t_end is in the past")
        n = 0
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            _, _, _, fn, args = self.pop()
            fn(*args)
            n += 1
            if after_event is not None:
                after_event()
        self.now = t_end
        return n


class EventLog:
    """Newline-delimited ``time kind key=value ...`` records."""

    def __init__(self, sink: io.TextIOBase | None = None):
        self._buf = sink if sink is not None else io.StringIO()

    def write(self, t: float, kind: str, **fields) -> None:
        parts = [f"{t:.9f}", kind]
        parts += [f"{k}={v}" for k, v in fields.items()]
        self._buf.write(" ".join(parts) + "\n")

    def text(self) -> str:
        if isinstance(self._buf, io.StringIO):
            return self._buf.getvalue()
        raise TypeError("log was streamed to an external sink")
