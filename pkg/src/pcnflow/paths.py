"""Candidate path sets for routing.

All functions are deterministic: equal-quality candidates are ordered by hop
count and then by the node-id sequence.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Iterable

from .errors import NoPath
from .graph import Pair, Path, Topology, edge_key, path_edges


def _neighbors(topology: Topology, u: int, banned_edges, banned_nodes):
    for v in topology.neighbors(u):
        if v in banned_nodes or edge_key(u, v) in banned_edges:
            continue
        yield v


def lex_shortest_path(
    topology: Topology,
    src: int,
    dst: int,
    banned_edges: frozenset | set = frozenset(),
    banned_nodes: frozenset | set = frozenset(),
    min_capacity: float = 0.0,
) -> Path | None:
    """Fewest-hop path, lexicographically smallest among ties."""
    if src == dst:
        return (src,)
    if src in banned_nodes or dst in banned_nodes:
        return None

    def ok(u, v):
        return topology.capacity(u, v) >= min_capacity

    # hop distance to dst, then walk forward choosing the smallest neighbour
    dist = {dst: 0}
    todo = deque([dst])
    while todo:
        u = todo.popleft()
        for v in _neighbors(topology, u, banned_edges, banned_nodes):
            if v not in dist and ok(u, v):
                dist[v] = dist[u] + 1
                todo.append(v)
    if src not in dist:
        return None
    out = [src]
    while out[-1] != dst:
        u = out[-1]
        out.append(
            min(
                v
                for v in _neighbors(topology, u, banned_edges, banned_nodes)
                if dist.get(v) == dist[u] - 1 and ok(u, v)
            )
        )
    return tuple(out)


def widest_path(topology: Topology, src: int, dst: int, banned_edges=frozenset()):
    """Maximum-bottleneck path; ties go to fewer hops, then lexicographic order.

    Returns ``(path, width)`` or ``None``.
    """
    widths = sorted({c.capacity for c in topology.channels if c.key not in banned_edges}, reverse=True)
    for w in widths:
        p = lex_shortest_path(topology, src, dst, banned_edges, min_capacity=w)
        if p is not None:
            return p, w
    return None


def _greedy_disjoint(pick, k: int, src: int, dst: int) -> list[Path]:
    if k < 1:
        raise ValueError("k must be at least 1")
    if src == dst:
        raise ValueError("source and destination must differ")
    used: set[Pair] = set()
    out: list[Path] = []
    while len(out) < k:
        p = pick(frozenset(used))
        if p is None:
            break
        out.append(p)
        used.update(edge_key(u, v) for u, v in path_edges(p))
    if not out:
        raise NoPath(src, dst)
    return out


def k_edge_disjoint_widest_paths(topology: Topology, src: int, dst: int, k: int) -> list[Path]:
    def pick(used):
        hit = widest_path(topology, src, dst, used)
        return hit[0] if hit else None

    return _greedy_disjoint(pick, k, src, dst)


def k_edge_disjoint_shortest_paths(topology: Topology, src: int, dst: int, k: int) -> list[Path]:
    return _greedy_disjoint(
        lambda used: lex_shortest_path(topology, src, dst, used), k, src, dst
    )


def yen_k_shortest(topology: Topology, src: int, dst: int, k: int) -> list[Path]:
    """Yen's loopless k-shortest paths by hop count."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if src == dst:
        raise ValueError("source and destination must differ")
    first = lex_shortest_path(topology, src, dst)
    if first is None:
        raise NoPath(src, dst)
    found = [first]
    cands: list[tuple[int, Path]] = []
    seen = {first}
    while len(found) < k:
        last = found[-1]
        for s in range(len(last) - 1):
            root = last[: s + 1]
            banned_e = {
                edge_key(p[s], p[s + 1]) for p in found if len(p) > s + 1 and p[: s + 1] == root
            }
            banned_n = set(root[:-1])
            spur = lex_shortest_path(topology, root[-1], dst, banned_e, banned_n)
            if spur is None:
                continue
            cand = root[:-1] + spur
            if cand not in seen:
                seen.add(cand)
                heapq.heappush(cands, (len(cand), cand))
        if not cands:
            break
        found.append(heapq.heappop(cands)[1])
    return found


def enumerate_trails(topology: Topology, src: int, dst: int, max_hops: int) -> list[Path]:
    """Every trail (no repeated channel) from src to dst with at most max_hops hops."""
    if src == dst:
        raise ValueError("source and destination must differ")
    if max_hops < 1:
        raise ValueError("max_hops must be at least 1")
    out: list[Path] = []
    used: set[Pair] = set()
    trail = [src]

    def walk(u):
        if u == dst:
            out.append(tuple(trail))
        if len(trail) > max_hops:
            return
        for v in topology.neighbors(u):
            e = edge_key(u, v)
            if e in used:
                continue
            used.add(e)
            trail.append(v)
            walk(v)
            trail.pop()
            used.discard(e)

    walk(src)
    out.sort(key=lambda p: (len(p), p))
    return out


def shortest_paths(topology: Topology, src: int, dst: int) -> list[Path]:
    p = lex_shortest_path(topology, src, dst)
    if p is None:
        raise NoPath(src, dst)
    return [p]


PATH_TYPES = {
    "widest": k_edge_disjoint_widest_paths,
    "shortest": k_edge_disjoint_shortest_paths,
    "yen": yen_k_shortest,
}


def path_set(
    topology: Topology, pairs: Iterable[Pair], kind: str = "widest", k: int = 4
) -> dict[Pair, list[Path]]:
    """Candidate paths for each pair; unreachable pairs map to an empty list."""
    if kind == "trails":
        fn = lambda t, i, j, kk: enumerate_trails(t, i, j, kk)  # noqa: E731
    else:
        try:
            fn = PATH_TYPES[kind]
        except KeyError:
            raise ValueError(f"unknown path type {kind!r}") from None
    out = {}
    for i, j in pairs:
        try:
            out[(i, j)] = fn(topology, i, j, k)
        except NoPath:
            out[(i, j)] = []
    return out
