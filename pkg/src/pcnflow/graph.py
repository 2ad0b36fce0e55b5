"""Channel graphs, payment demand graphs and circulation decomposition.

Nodes are nonnegative integers.  A path is a tuple of node ids; since at most
one channel joins any pair of nodes, the node sequence pins down the edges.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from .errors import EmptyFile, MalformedFile, NotACirculation, TreeNotSpanning

BALANCE_TOL = 1e-9

Pair = tuple[int, int]
Path = tuple[int, ...]
FlowAssignment = dict[Path, float]


def edge_key(u: int, v: int) -> Pair:
    return (u, v) if u < v else (v, u)


def path_edges(path: Path) -> list[Pair]:
    """Directed hops of a path."""
    return list(zip(path[:-1], path[1:]))


def is_trail(path: Path) -> bool:
    seen = set()
    for u, v in path_edges(path):
        k = edge_key(u, v)
        if k in seen or u == v:
            return False
        seen.add(k)
    return len(path) >= 2


@dataclass(frozen=True)
class Channel:
    u: int
    v: int
    capacity: float
    delay: float  # seconds per hop

    @property
    def key(self) -> Pair:
        return edge_key(self.u, self.v)


@dataclass(frozen=True)
class Topology:
    nodes: tuple[int, ...]
    channels: tuple[Channel, ...]
    _index: Mapping[Pair, Channel] = field(init=False, repr=False, compare=False)
    _adj: Mapping[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        chans = []
        index: dict[Pair, Channel] = {}
        for ch in self.channels:
            if ch.u == ch.v:
                raise ValueError(f"self-loop channel at node {ch.u}")
            if not ch.capacity > 0:
                raise ValueError(f"channel {ch.key} has nonpositive capacity")
            if not ch.delay > 0:
                raise ValueError(f"channel {ch.key} has nonpositive delay")
            a, b = ch.key
            norm = Channel(a, b, float(ch.capacity), float(ch.delay))
            if norm.key in index:
                raise ValueError(f"duplicate channel {norm.key}")
            index[norm.key] = norm
            chans.append(norm)
        nodes = set(self.nodes)
        for a, b in index:
            nodes.update((a, b))
        if any(n < 0 for n in nodes):
            raise ValueError("node ids must be nonnegative")
        adj: dict[int, list[int]] = {n: [] for n in nodes}
        for a, b in index:
            adj[a].append(b)
            adj[b].append(a)
        object.__setattr__(self, "nodes", tuple(sorted(nodes)))
        object.__setattr__(self, "channels", tuple(sorted(chans, key=lambda c: c.key)))
        object.__setattr__(self, "_index", MappingProxyType(index))
        object.__setattr__(
            self, "_adj", MappingProxyType({n: tuple(sorted(vs)) for n, vs in adj.items()})
        )

    @classmethod
    def from_edges(cls, edges: Iterable[tuple], capacity: float = 1.0, delay: float = 0.03):
        """Build from (u, v) or (u, v, capacity[, delay]) tuples."""
        chans = []
        for e in edges:
            u, v = e[0], e[1]
            c = e[2] if len(e) > 2 else capacity
            d = e[3] if len(e) > 3 else delay
            chans.append(Channel(int(u), int(v), c, d))
        return cls((), tuple(chans))

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self._adj.get(u, ())

    def degree(self, u: int) -> int:
        return len(self.neighbors(u))

    def has_channel(self, u: int, v: int) -> bool:
        return edge_key(u, v) in self._index

    def channel(self, u: int, v: int) -> Channel:
        return self._index[edge_key(u, v)]

    def capacity(self, u: int, v: int) -> float:
        return self._index[edge_key(u, v)].capacity

    def delay(self, u: int, v: int) -> float:
        return self._index[edge_key(u, v)].delay

    def edge_keys(self) -> list[Pair]:
        return [c.key for c in self.channels]

    def path_delay(self, path: Path) -> float:
        return sum(self.delay(u, v) for u, v in path_edges(path))

    def bottleneck(self, path: Path) -> float:
        return min(self.capacity(u, v) for u, v in path_edges(path))

    def is_path(self, path: Path) -> bool:
        return is_trail(path) and all(self.has_channel(u, v) for u, v in path_edges(path))

    def component_of(self, src: int) -> set[int]:
        seen = {src}
        todo = deque([src])
        while todo:
            u = todo.popleft()
            for v in self.neighbors(u):
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        return seen

    def is_connected(self) -> bool:
        return not self.nodes or len(self.component_of(self.nodes[0])) == len(self.nodes)

    def with_capacity(self, capacity: float) -> "Topology":
        return Topology(
            self.nodes, tuple(Channel(c.u, c.v, capacity, c.delay) for c in self.channels)
        )

    def scaled(self, factor: float) -> "Topology":
        return Topology(
            self.nodes,
            tuple(Channel(c.u, c.v, c.capacity * factor, c.delay) for c in self.channels),
        )


class DemandMatrix(Mapping[Pair, float]):
    """Directed payment graph; maps (i, j) to a nonnegative rate.

    Zero entries are dropped on construction so that ``len`` counts edges of
    the payment graph.  ``math.inf`` is allowed and means "uncapped".
    """

    __slots__ = ("_d",)

    def __init__(self, entries: Mapping[Pair, float] | Iterable[tuple[Pair, float]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        d: dict[Pair, float] = {}
        for (i, j), r in items:
            i, j, r = int(i), int(j), float(r)
            if i == j:
                raise ValueError(f"demand entry ({i}, {j}) is a self-loop")
            if math.isnan(r) or r < 0:
                raise ValueError(f"demand ({i}, {j}) has invalid rate {r}")
            if r > 0:
                d[(i, j)] = d.get((i, j), 0.0) + r
        self._d = dict(sorted(d.items()))

    def __getitem__(self, key: Pair) -> float:
        return self._d[key]

    def get(self, key, default=0.0):
        return self._d.get(key, default)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __repr__(self):
        return f"DemandMatrix({self._d!r})"

    def __eq__(self, other):
        if isinstance(other, Mapping):
            return dict(self.items()) == dict(other.items())
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self._d.items()))

    def total(self) -> float:
        return sum(self._d.values())

    def nodes(self) -> set[int]:
        out = set()
        for i, j in self._d:
            out.update((i, j))
        return out

    def out_weight(self, u: int) -> float:
        return sum(r for (i, _), r in self._d.items() if i == u)

    def in_weight(self, u: int) -> float:
        return sum(r for (_, j), r in self._d.items() if j == u)

    def imbalance(self) -> dict[int, float]:
        """out-weight minus in-weight per node."""
        net: dict[int, float] = defaultdict(float)
        for (i, j), r in self._d.items():
            net[i] += r
            net[j] -= r
        return dict(net)

    def is_circulation(self, tol: float = BALANCE_TOL) -> bool:
        return all(abs(x) <= tol for x in self.imbalance().values())

    def scaled(self, factor: float) -> "DemandMatrix":
        return DemandMatrix({k: r * factor for k, r in self._d.items()})

    def __add__(self, other: Mapping[Pair, float]) -> "DemandMatrix":
        out = dict(self._d)
        for k, r in other.items():
            out[k] = out.get(k, 0.0) + r
        return DemandMatrix(out)

    def __sub__(self, other: Mapping[Pair, float]) -> "DemandMatrix":
        # small negative residue from float subtraction is snapped to zero
        out = dict(self._d)
        for k, r in other.items():
            out[k] = out.get(k, 0.0) - r
        return DemandMatrix({k: (0.0 if abs(r) <= BALANCE_TOL else r) for k, r in out.items()})


@dataclass(frozen=True)
class Decomposition:
    circulation: DemandMatrix
    dag: DemandMatrix
    value: float


def _find_negative_cycle(n: int, arcs: list[tuple[int, int, float, int]]):
    """Bellman-Ford from a virtual root; returns arc indices of a negative cycle."""
    dist = [0.0] * n
    pred = [-1] * n
    last = -1
    for _ in range(n):
        last = -1
        for idx, (a, b, cost, _) in enumerate(arcs):
            if dist[a] + cost < dist[b] - 1e-12:
                dist[b] = dist[a] + cost
                pred[b] = idx
                last = b
        if last < 0:
            return None
    # walk back n steps to land inside the cycle
    x = last
    for _ in range(n):
        x = arcs[pred[x]][0]
    cycle = []
    y = x
    while True:
        idx = pred[y]
        cycle.append(idx)
        y = arcs[idx][0]
        if y == x:
            break
    cycle.reverse()
    return cycle


def max_circulation(demand: Mapping[Pair, float]) -> dict[Pair, float]:
    """Largest node-balanced subgraph of ``demand`` by cycle cancelling.

    Each demand edge e = (i, j) has capacity w_H(e) and cost -1.  A flow with
    no negative-cost cycle in its residual graph is a min-cost circulation,
    i.e. one of maximum total weight.  Residual arcs include the backward
    direction of every positive edge, which is what lets a bad early choice
    of cycle be undone (plain greedy removal cannot).
    """
    edges = [(k, r) for k, r in sorted(demand.items()) if r > 0]
    if not edges:
        return {}
    ids = sorted({x for (i, j), _ in edges for x in (i, j)})
    pos = {v: n for n, v in enumerate(ids)}
    cap = [r for _, r in edges]
    flow = [0.0] * len(edges)
    scale = max(cap)
    eps = 1e-12 * max(1.0, scale)
    for _ in range(10_000):
        arcs = []
        for e, ((i, j), _) in enumerate(edges):
            if flow[e] < cap[e] - eps:
                arcs.append((pos[i], pos[j], -1.0, e))
            if flow[e] > eps:
                arcs.append((pos[j], pos[i], 1.0, ~e))
        cycle = _find_negative_cycle(len(ids), arcs)
        if cycle is None:
            break
        push = math.inf
        for idx in cycle:
            e = arcs[idx][3]
            push = min(push, cap[e] - flow[e] if e >= 0 else flow[~e])
        for idx in cycle:
            e = arcs[idx][3]
            if e >= 0:
                flow[e] = min(cap[e], flow[e] + push)
            else:
                flow[~e] = max(0.0, flow[~e] - push)
    else:  # pragma: no cover - would need adversarial irrational weights
        raise RuntimeError("cycle cancelling did not terminate")
    return {k: f for (k, _), f in zip(edges, flow) if f > eps}


def _snap_to_demand(circ: dict[Pair, float], demand: Mapping[Pair, float]) -> dict[Pair, float]:
    # pushes are sums/differences of demand weights, so anything within
    # rounding of the full weight is the full weight
    out = {}
    for k, f in circ.items():
        d = demand[k]
        out[k] = d if abs(d - f) <= BALANCE_TOL * max(1.0, d) else f
    return out


def decompose(demand: Mapping[Pair, float]) -> Decomposition:
    """Split ``demand`` into a maximum circulation and the acyclic remainder."""
    demand = demand if isinstance(demand, DemandMatrix) else DemandMatrix(demand)
    finite = {k: r for k, r in demand.items() if math.isfinite(r)}
    if len(finite) != len(demand):
        raise ValueError("decompose needs finite demand rates")
    circ = DemandMatrix(_snap_to_demand(max_circulation(finite), demand))
    dag = demand - circ
    return Decomposition(circ, dag, circ.total())


def find_positive_cycle(weights: Mapping[Pair, float], tol: float = 0.0) -> list[int] | None:
    """Any directed cycle using only edges heavier than ``tol`` (DFS colouring)."""
    succ: dict[int, list[int]] = defaultdict(list)
    for (i, j), w in sorted(weights.items()):
        if w > tol:
            succ[i].append(j)
    colour: dict[int, int] = {}
    for root in sorted(succ):
        if root in colour:
            continue
        stack = [(root, iter(succ[root]))]
        colour[root] = 1
        trail = [root]
        while stack:
            u, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[u] = 2
                stack.pop()
                trail.pop()
                continue
            c = colour.get(nxt, 0)
            if c == 1:
                return trail[trail.index(nxt):] + [nxt]
            if c == 0:
                colour[nxt] = 1
                trail.append(nxt)
                stack.append((nxt, iter(succ[nxt])))
    return None


def greedy_cycle_removal(demand: Mapping[Pair, float]) -> Decomposition:
    """Peel off directed cycles at their bottleneck weight until none remain.

    The outcome depends on which cycles happen to be found first, so the
    extracted value can fall short of :func:`decompose`.  Kept for comparison.
    """
    rest = {k: float(r) for k, r in demand.items() if r > 0}
    circ: dict[Pair, float] = defaultdict(float)
    while (cyc := find_positive_cycle(rest)) is not None:
        hops = list(zip(cyc[:-1], cyc[1:]))
        w = min(rest[h] for h in hops)
        for h in hops:
            circ[h] += w
            rest[h] -= w
            if rest[h] <= BALANCE_TOL:
                del rest[h]
    c = DemandMatrix(_snap_to_demand(dict(circ), demand))
    return Decomposition(c, DemandMatrix(demand) - c, c.total())


def tree_path(tree_adj: Mapping[int, list[int]], src: int, dst: int) -> Path | None:
    prev = {src: src}
    todo = deque([src])
    while todo:
        u = todo.popleft()
        if u == dst:
            break
        for v in tree_adj.get(u, ()):
            if v not in prev:
                prev[v] = u
                todo.append(v)
    if dst not in prev:
        return None
    out = [dst]
    while out[-1] != src:
        out.append(prev[out[-1]])
    return tuple(reversed(out))


def bfs_tree(topology: Topology, root: int | None = None) -> set[Pair]:
    """Breadth-first spanning tree of the component containing ``root``."""
    if root is None:
        root = topology.nodes[0]
    seen = {root}
    todo = deque([root])
    tree = set()
    while todo:
        u = todo.popleft()
        for v in topology.neighbors(u):
            if v not in seen:
                seen.add(v)
                tree.add(edge_key(u, v))
                todo.append(v)
    return tree


def spanning_tree_route(
    circulation: Mapping[Pair, float], topology: Topology, tree: Iterable[Pair]
) -> FlowAssignment:
    """Route each circulation edge along the unique path in ``tree``.

    Any cut of the tree sees equal circulation weight both ways, so every
    tree edge carries the same rate in each direction.
    """
    circ = circulation if isinstance(circulation, DemandMatrix) else DemandMatrix(circulation)
    bad = {n: x for n, x in circ.imbalance().items() if abs(x) > BALANCE_TOL}
    if bad:
        raise NotACirculation(f"node imbalance {bad}")
    if not circ:
        return {}
    tree_keys = {edge_key(u, v) for u, v in tree}
    adj: dict[int, list[int]] = defaultdict(list)
    for a, b in sorted(tree_keys):
        if not topology.has_channel(a, b):
            raise TreeNotSpanning(f"tree edge {(a, b)} is not a channel")
        adj[a].append(b)
        adj[b].append(a)
    need = circ.nodes()
    root = min(need)
    reach = {root}
    todo = deque([root])
    while todo:
        u = todo.popleft()
        for v in adj[u]:
            if v not in reach:
                reach.add(v)
                todo.append(v)
    # a tree on its touched vertices has exactly |V| - 1 edges
    touched = {x for k in tree_keys for x in k} | {root}
    if not need <= reach:
        raise TreeNotSpanning(f"tree misses nodes {sorted(need - reach)}")
    if touched != reach or len(tree_keys) != len(reach) - 1:
        raise TreeNotSpanning("edge set is not a tree")
    flows: FlowAssignment = {}
    for (i, j), w in circ.items():
        p = tree_path(adj, i, j)
        assert p is not None
        flows[p] = flows.get(p, 0.0) + w
    return flows


def directed_edge_flows(flows: Mapping[Path, float]) -> dict[Pair, float]:
    out: dict[Pair, float] = defaultdict(float)
    for p, x in flows.items():
        for h in path_edges(p):
            out[h] += x
    return dict(out)


def pair_of(path: Path) -> Pair:
    return (path[0], path[-1])


def throughput(flows: Mapping[Path, float]) -> float:
    return sum(flows.values())


# ---- text formats -------------------------------------------------------


def _data_lines(path):
    text = FsPath(path).read_text()
    found = False
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            found = True
            yield n, line.split()
    if not found:
        raise EmptyFile(f"{path}: no data lines")


def _num(path, n, tok, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise MalformedFile(path, n, f"cannot parse {tok!r}") from None


def read_topology(path) -> Topology:
    """Parse ``u v capacity delay_ms`` lines."""
    chans = []
    for n, toks in _data_lines(path):
        if len(toks) != 4:
            raise MalformedFile(path, n, "expected 'u v capacity delay_ms'")
        u, v = _num(path, n, toks[0], int), _num(path, n, toks[1], int)
        c, d = _num(path, n, toks[2]), _num(path, n, toks[3])
        chans.append(Channel(u, v, c, d / 1000.0))
    try:
        return Topology((), tuple(chans))
    except ValueError as exc:
        raise MalformedFile(path, 0, str(exc)) from None


def write_topology(topology: Topology, path) -> None:
    lines = ["# u v capacity delay_ms"]
    for c in topology.channels:
        lines.append(f"{c.u} {c.v} {c.capacity:g} {c.delay * 1000:g}")
    FsPath(path).write_text("\n".join(lines) + "\n")


def read_demand(path) -> DemandMatrix:
    entries = []
    for n, toks in _data_lines(path):
        if len(toks) != 3:
            raise MalformedFile(path, n, "expected 'i j rate'")
        entries.append(
            ((_num(path, n, toks[0], int), _num(path, n, toks[1], int)), _num(path, n, toks[2]))
        )
    try:
        return DemandMatrix(entries)
    except ValueError as exc:
        raise MalformedFile(path, 0, str(exc)) from None


def write_demand(demand: Mapping[Pair, float], path) -> None:
    lines = ["# i j rate"] + [f"{i} {j} {r!r}" for (i, j), r in sorted(demand.items())]
    FsPath(path).write_text("\n".join(lines) + "\n")
