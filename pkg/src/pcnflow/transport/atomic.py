"""Baselines that send each transaction unsplit (or split once, up front).

None of these queue at routers: a hop without funds fails the unit and the
reservations made so far are released on the way back.
"""

from __future__ import annotations

from ..graph import Path, Topology, edge_key
from ..paths import lex_shortest_path
from .base import Scheme


class ShortestPath(Scheme):
    name = "shortest"
    queueing = False

    def __init__(self):
        self._paths: dict[tuple[int, int], Path | None] = {}

    def on_transaction(self, txn, now):
        key = (txn.src, txn.dst)
        if key not in self._paths:
            self._paths[key] = lex_shortest_path(self.sim.topology, *key)
        p = self._paths[key]
        if p is None:
            txn.failed = True
            return
        self.sim.send(self.sim.new_unit(txn, txn.amount, p))

    def on_fail(self, unit, now, reason, hop):
        txn = self.sim.txns[unit.txn]
        if not txn.done:
            txn.failed = True


# ---- landmark routing ---------------------------------------------------

def pick_landmarks(topology: Topology, k: int) -> list[int]:
    """The ``k`` highest-degree nodes, smaller ids first among equals."""
    return sorted(topology.nodes, key=lambda n: (-topology.degree(n), n))[:k]


def loop_erase(walk) -> Path:
    out: list[int] = []
    seen: dict[int, int] = {}
    for n in walk:
        if n in seen:
            cut = seen[n]
            for m in out[cut + 1:]:
                del seen[m]
            del out[cut + 1:]
        else:
            seen[n] = len(out)
            out.append(n)
    return tuple(out)


def landmark_paths(topology: Topology, src: int, dst: int, landmarks) -> list[Path]:
    """Distinct loop-free paths src -> landmark -> dst, in landmark order."""
    out: list[Path] = []
    for lm in landmarks:
        a = lex_shortest_path(topology, src, lm)
        b = lex_shortest_path(topology, lm, dst)
        if a is None or b is None:
            continue
        p = loop_erase(a + b[1:])
        if len(p) > 1 and p not in out:
            out.append(p)
    return out


def landmark_route(amount: int, bottlenecks) -> list[int] | None:
    """Greedy split of ``amount`` over paths, widest probed bottleneck first.

    Returns the per-path amounts (same order as ``bottlenecks``), or None
    when the bottlenecks together cannot carry the amount.
    """
    if amount <= 0:
        raise ValueError("amount must be positive")
    if sum(max(b, 0) for b in bottlenecks) < amount:
        return None
    order = sorted(range(len(bottlenecks)), key=lambda i: (-bottlenecks[i], i))
    parts = [0] * len(bottlenecks)
    left = amount
    for i in order:
        take = min(left, max(bottlenecks[i], 0))
        parts[i] = take
        left -= take
        if left == 0:
            break
    return parts


class Landmark(Scheme):
    """Probes return the instantaneous bottleneck of each landmark path."""

    name = "landmark"
    queueing = False

    def __init__(self, k: int = 4):
        self.k = k
        self._paths: dict[tuple[int, int], list[Path]] = {}

    def attach(self, sim):
        super().attach(sim)
        self.landmarks = pick_landmarks(sim.topology, self.k)

    def paths(self, src, dst):
        key = (src, dst)
        if key not in self._paths:
            self._paths[key] = landmark_paths(self.sim.topology, src, dst, self.landmarks)
        return self._paths[key]

    def on_transaction(self, txn, now):
        sim = self.sim
        paths = self.paths(txn.src, txn.dst)
        bott = [min(sim.channel(a, b).balance[a] for a, b in zip(p, p[1:])) for p in paths]
        parts = landmark_route(txn.amount, bott) if paths else None
        if parts is None:
            txn.failed = True
            return
        for i, (p, amt) in enumerate(zip(paths, parts)):
            if amt:
                sim.send(sim.new_unit(txn, amt, p, i))

    def on_fail(self, unit, now, reason, hop):
        txn = self.sim.txns[unit.txn]
        if not txn.done:
            txn.failed = True


# ---- LND-style retries ---------------------------------------------------

class Lnd(Scheme):
    """Unsplit payments on the sender's current shortest path.

    A failing channel is hidden from that sender's view until
    ``now + blacklist_time``; the payment is then retried on the new shortest
    path until the deadline passes or the destination becomes unreachable.
    """

    name = "lnd"
    queueing = False

    def __init__(self, blacklist_time: float = 5.0):
        self.blacklist_time = blacklist_time
        self.blacklist: dict[int, dict[tuple[int, int], float]] = {}

    def banned(self, node: int, now: float) -> set:
        bl = self.blacklist.setdefault(node, {})
        for e in [e for e, exp in bl.items() if exp <= now]:
            del bl[e]
        return set(bl)

    def route(self, src, dst, now):
        return lex_shortest_path(self.sim.topology, src, dst, banned_edges=self.banned(src, now))

    def _attempt(self, txn, now):
        p = self.route(txn.src, txn.dst, now)
        if p is None:
            txn.failed = True
            self.sim.emit("unreachable", txn=txn.id)
            return
        self.sim.send(self.sim.new_unit(txn, txn.amount, p))

    def on_transaction(self, txn, now):
        self._attempt(txn, now)

    def on_fail(self, unit, now, reason, hop):
        txn = self.sim.txns[unit.txn]
        if reason == "nofunds":
            e = edge_key(unit.route[hop], unit.route[hop + 1])
            self.blacklist.setdefault(unit.src, {})[e] = now + self.blacklist_time
        if txn.done:
            return
        if now >= txn.deadline:
            txn.failed = True
            return
        self._attempt(txn, now)

