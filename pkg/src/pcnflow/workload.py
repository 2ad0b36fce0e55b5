"""Demand matrices, arrival streams and transaction-size distributions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

from .errors import EmptyFile, MalformedFile
from .graph import DemandMatrix, Topology, decompose
from .sim.channel import to_milli
from .sim.core import Transaction


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---- demand matrices -----------------------------------------------------

def gen_circulation_matrix(n: int, x: int, seed=None, nodes: Sequence[int] | None = None) -> DemandMatrix:
    """Sum of ``x`` random derangements of the node set.

    Fixed points are removed by redrawing the permutation, so every node
    sends and receives exactly ``x`` units of weight.
    """
    if x < 1:
        raise ValueError("x must be at least 1")
    if n < 2:
        raise ValueError("need at least two nodes")
    rng = _rng(seed)
    ids = list(range(n)) if nodes is None else list(nodes)
    if len(ids) != n:
        raise ValueError("nodes must have length n")
    acc: dict[tuple[int, int], float] = {}
    for _ in range(x):
        while True:
            perm = rng.permutation(n)
            if not np.any(perm == np.arange(n)):
                break
        for i, j in enumerate(perm):
            key = (ids[i], ids[int(j)])
            acc[key] = acc.get(key, 0.0) + 1.0
    return DemandMatrix(acc)


def _exp_weights(n: int, beta: float) -> np.ndarray:
    ranks = np.arange(n, dtype=float)
    w = np.exp(-ranks / (beta * n))
    return w / w.sum()


def gen_dag_matrix(n: int, y: int, beta: float, seed=None, nodes: Sequence[int] | None = None) -> DemandMatrix:
    """``y`` unit-weight (sender, receiver) pairs drawn with skewed node popularity.

    Senders and receivers each get an independent random ranking of the
    nodes; node of rank r is picked with probability proportional to
    exp(-r / (beta * n)).  Small ``beta`` concentrates the demand on a few
    senders and receivers.  The top sender and top receiver always differ.
    """
    if y < 1:
        raise ValueError("y must be at least 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if n < 2:
        raise ValueError("need at least two nodes")
    rng = _rng(seed)
    ids = list(range(n)) if nodes is None else list(nodes)
    send_rank = rng.permutation(n)
    recv_rank = rng.permutation(n)
    if send_rank[0] == recv_rank[0]:
        recv_rank[[0, 1]] = recv_rank[[1, 0]]
    w = _exp_weights(n, beta)
    ps = np.zeros(n)
    pr = np.zeros(n)
    ps[send_rank] = w
    pr[recv_rank] = w
    acc: dict[tuple[int, int], float] = {}
    for _ in range(y):
        i = int(rng.choice(n, p=ps))
        q = pr.copy()
        q[i] = 0.0
        if q.sum() <= 0:
            # all receiver mass sat on the sender; fall back to the best other node
            j = int(next(r for r in recv_rank if r != i))
        else:
            j = int(rng.choice(n, p=q / q.sum()))
        key = (ids[i], ids[j])
        acc[key] = acc.get(key, 0.0) + 1.0
    return DemandMatrix(acc)


def dag_fraction(demand: DemandMatrix) -> float:
    total = demand.total()
    return decompose(demand).dag.total() / total if total > 0 else 0.0


def gen_mixed_matrix(n: int, fraction: float, seed=None, x: int = 5, y: int | None = None,
                     beta: float = 0.3, nodes: Sequence[int] | None = None,
                     tol: float = 1e-3) -> DemandMatrix:
    """Circulation plus DAG demand whose decomposed DAG share is ``fraction``.

    The DAG component is scaled by bisection until the DAG weight reported
    by ``decompose`` matches the target share; the result is normalized to
    total weight 1.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("DAG fraction must lie in [0, 1]")
    rng = _rng(seed)
    circ = gen_circulation_matrix(n, x, rng, nodes)
    circ = circ.scaled(1.0 / circ.total())
    if fraction == 0.0:
        return circ
    # keep only the acyclic part of the sample, otherwise its own cycles can
    # cap the reachable share below the target
    dag = DemandMatrix({})
    while dag.total() <= 0:
        dag = decompose(gen_dag_matrix(n, y or 4 * n, beta, rng, nodes)).dag
    dag = dag.scaled(1.0 / dag.total())
    if fraction == 1.0:
        return dag
    lo, hi = 0.0, 1.0
    while dag_fraction(circ + dag.scaled(hi)) < fraction and hi < 1e6:
        lo, hi = hi, hi * 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f = dag_fraction(circ + dag.scaled(mid))
        if abs(f - fraction) <= tol:
            break
        if f < fraction:
            lo = mid
        else:
            hi = mid
    mix = circ + dag.scaled(mid)
    return mix.scaled(1.0 / mix.total())


# ---- sizes -----------------------------------------------------------------

@dataclass(frozen=True)
class SizeDistribution:
    """Empirical distribution over transaction sizes in tokens."""

    amounts: tuple[float, ...]
    cdf: tuple[float, ...]

    def __post_init__(self):
        if not self.amounts:
            raise ValueError("empty size distribution")
        if len(self.amounts) != len(self.cdf):
            raise ValueError("amounts and cdf differ in length")
        if any(a <= 0 for a in self.amounts) or any(b <= a for a, b in zip(self.amounts, self.amounts[1:])):
            raise ValueError("amounts must be positive and strictly increasing")
        if any(b < a for a, b in zip(self.cdf, self.cdf[1:])) or abs(self.cdf[-1] - 1.0) > 1e-9:
            raise ValueError("cdf must be nondecreasing and end at 1")

    @classmethod
    def from_weights(cls, amounts, weights=None) -> "SizeDistribution":
        amounts = np.asarray(amounts, float)
        weights = np.ones_like(amounts) if weights is None else np.asarray(weights, float)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        uniq, inv = np.unique(amounts, return_inverse=True)
        mass = np.bincount(inv, weights=weights)
        cdf = np.cumsum(mass) / mass.sum()
        cdf[-1] = 1.0
        return cls(tuple(float(a) for a in uniq), tuple(float(c) for c in cdf))

    @classmethod
    def constant(cls, amount: float) -> "SizeDistribution":
        return cls((float(amount),), (1.0,))

    def probabilities(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.cdf]))

    def mean(self) -> float:
        return float(np.dot(self.amounts, self.probabilities()))

    def median(self) -> float:
        return self.amounts[int(np.searchsorted(self.cdf, 0.5))]

    def scaled(self, factor: float) -> "SizeDistribution":
        if not factor > 0:
            raise ValueError("scale must be positive")
        return SizeDistribution(tuple(a * factor for a in self.amounts), self.cdf)

    def sample(self, rng, size: int) -> np.ndarray:
        u = _rng(rng).random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        return np.asarray(self.amounts)[np.minimum(idx, len(self.amounts) - 1)]


def load_size_distribution(path) -> SizeDistribution:
    """Read one amount per line, or ``amount,weight`` pairs; ``#`` starts a comment."""
    amounts, weights = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            row = [c.strip() for c in row]
            if not row or not row[0] or row[0].startswith("#"):
                continue
            if width is None:
                width = len(row)
                if width not in (1, 2):
                    raise MalformedFile(path, lineno, "expected 1 or 2 columns")
            elif len(row) != width:
                raise MalformedFile(path, lineno, f"expected {width} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise MalformedFile(path, lineno, f"not a number: {','.join(row)}") from None
            if not (vals[0] > 0 and math.isfinite(vals[0])):
                raise MalformedFile(path, lineno, "amounts must be positive and finite")
            if width == 2 and not (vals[1] >= 0 and math.isfinite(vals[1])):
                raise MalformedFile(path, lineno, "weights must be nonnegative")
            amounts.append(vals[0])
            weights.append(vals[1] if width == 2 else 1.0)
    if not amounts:
        raise EmptyFile(f"{path}: no size records")
    if sum(weights) <= 0:
        raise MalformedFile(path, 0, "weights sum to zero")
    return SizeDistribution.from_weights(amounts, weights)


def default_sizes() -> SizeDistribution:
    """Bundled synthetic heavy-tailed sizes (log-normal, median 25)."""
    ref = resources.files("pcnflow") / "data" / "sizes_synthetic.csv"
    with resources.as_file(ref) as p:
        return load_size_distribution(p)


def synthetic_lognormal(n: int = 2000, median: float = 25.0, mean: float = 88.0,
                        cap: float = 3930.0) -> np.ndarray:
    """Deterministic quantile grid of a log-normal with the given median and mean."""
    from statistics import NormalDist

    sigma = math.sqrt(2 * math.log(mean / median))
    nd = NormalDist(math.log(median), sigma)
    qs = (np.arange(n) + 0.5) / n
    return np.minimum(np.exp([nd.inv_cdf(q) for q in qs]), cap)


# ---- arrivals -------------------------------------------------------------

def gen_arrivals(demand, horizon: float, seed=None, rate_per_sender: float | None = None,
                 sizes: SizeDistribution | None = None, deadline: float = 5.0,
                 start: float = 0.0, first_id: int = 0) -> list[Transaction]:
    """Independent Poisson arrivals per demand pair over ``[start, start + horizon)``.

    Without ``rate_per_sender`` each entry is taken as transactions per
    second.  With it, the whole matrix is rescaled so that the senders
    average that many transactions per second.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = _rng(seed)
    sizes = sizes or SizeDistribution.constant(1.0)
    items = [(k, r) for k, r in sorted(demand.items()) if r > 0]
    scale = 1.0
    if rate_per_sender is not None and items:
        senders = {i for (i, _), _ in items}
        scale = rate_per_sender * len(senders) / sum(r for _, r in items)
    events = []
    for (i, j), r in items:
        count = rng.poisson(r * scale * horizon)
        times = np.sort(start + rng.random(count) * horizon)
        amts = sizes.sample(rng, count)
        events.extend((float(t), i, j, float(a)) for t, a in zip(times, amts))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    return [
        Transaction(first_id + n, i, j, max(1, to_milli(a)), t, t + deadline)
        for n, (t, i, j, a) in enumerate(events)
    ]


def merge_streams(*streams: list[Transaction]) -> list[Transaction]:
    """Time-ordered union with ids renumbered from zero."""
    merged = sorted((t for s in streams for t in s), key=lambda t: (t.arrival, t.src, t.dst, t.id))
    return [Transaction(n, t.src, t.dst, t.amount, t.arrival, t.deadline) for n, t in enumerate(merged)]


# ---- built-in scenario ----------------------------------------------------

@dataclass(frozen=True)
class Phase:
    start: float
    end: float
    demand: DemandMatrix


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Topology
    phases: tuple[Phase, ...]

    def arrivals(self, seed=None, sizes: SizeDistribution | None = None,
                 deadline: float = 5.0) -> list[Transaction]:
        rng = _rng(seed)
        parts = [gen_arrivals(ph.demand, ph.end - ph.start, rng, sizes=sizes,
                              deadline=deadline, start=ph.start) for ph in self.phases]
        return merge_streams(*parts)


def deadlock3(switch: float = 40.0, horizon: float = 110.0, capacity: float = 20.0,
              delay: float = 0.03) -> Scenario:
    """Three nodes on a line; DAG-heavy demand drains node 2, then only 1 <-> 3 remains."""
    topo = Topology.from_edges([(1, 2), (2, 3)], capacity=capacity, delay=delay)
    phase1 = DemandMatrix({(1, 3): 1.0, (2, 3): 2.0, (3, 1): 2.0})
    phase2 = DemandMatrix({(1, 3): 1.0, (3, 1): 1.0})
    return Scenario("deadlock3", topo, (Phase(0.0, switch, phase1), Phase(switch, horizon, phase2)))


SCENARIOS = {"deadlock3": deadlock3}


def write_synthetic_sizes(path) -> None:
    vals = synthetic_lognormal()
    p = FsPath(path)
    with p.open("w") as fh:
        fh.write("# synthetic log-normal transaction sizes (tokens), median 25, long tail capped at 3930\n")
        for v in vals:
            fh.write(f"{v:.2f}\n")
