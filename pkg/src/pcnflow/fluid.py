"""Balance-constrained throughput LPs and the rebalancing frontier t(B)."""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyPathSet
from .graph import Pair, Path, Topology, is_trail, path_edges
from .lp import LpInstance, LpSolution, Row, solve_lp

UNCAPPED = math.inf


def path_var(p: Path) -> str:
    return "x:" + "-".join(map(str, p))


def rebal_var(u: int, v: int) -> str:
    return f"b:{u}>{v}"


def _collect_paths(topology, demand, paths) -> list[Path]:
    out = []
    for pair in sorted(demand):
        ps = list(paths.get(pair, ()))
        if not ps:
            raise EmptyPathSet(pair)
        for p in ps:
            p = tuple(p)
            if (p[0], p[-1]) != pair:
                raise ValueError(f"path {p} does not join {pair}")
            if not is_trail(p) or not topology.is_path(p):
                raise ValueError(f"path {p} is not a trail in the topology")
            if p not in out:
                out.append(p)
    return out


def _flow_rows(topology, demand, plist, delta, balanced: bool):
    """Variables, demand rows, capacity rows and balance rows shared by every builder."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    names = [path_var(p) for p in plist]
    rows = []
    for (i, j) in sorted(demand):
        coeffs = {path_var(p): 1.0 for p in plist if p[0] == i and p[-1] == j}
        rows.append(Row("demand", f"d:{i},{j}", coeffs, "<=", float(demand[(i, j)])))
    on_hop: dict[tuple[int, int], list[str]] = {}
    for p in plist:
        for h in path_edges(p):
            on_hop.setdefault(h, []).append(path_var(p))
    for ch in topology.channels:
        u, v = ch.key
        coeffs: dict[str, float] = {}
        for h in ((u, v), (v, u)):
            for name in on_hop.get(h, ()):
                coeffs[name] = coeffs.get(name, 0.0) + 1.0
        rows.append(Row("capacity", f"cap:{u},{v}", coeffs, "<=", ch.capacity / delta))
    bal = []
    for ch in topology.channels:
        u, v = ch.key
        if balanced:
            bal.append(Row("balance", f"bal:{u},{v}", _net(on_hop, u, v), "==", 0.0))
        else:
            for a, b in ((u, v), (v, u)):
                coeffs = _net(on_hop, a, b)
                coeffs[rebal_var(a, b)] = -1.0
                bal.append(Row("balance", f"bal:{a}>{b}", coeffs, "<=", 0.0))
    return names, rows + bal


def _net(on_hop, a, b) -> dict[str, float]:
    coeffs: dict[str, float] = {}
    for name in on_hop.get((a, b), ()):
        coeffs[name] = coeffs.get(name, 0.0) + 1.0
    for name in on_hop.get((b, a), ()):
        coeffs[name] = coeffs.get(name, 0.0) - 1.0
    return coeffs


def build_balanced_lp(
    topology: Topology,
    demand: Mapping[Pair, float],
    paths: Mapping[Pair, Sequence[Path]],
    delta: float,
) -> LpInstance:
    """Max total path rate with every channel carrying equal rates both ways."""
    plist = _collect_paths(topology, demand, paths)
    names, rows = _flow_rows(topology, demand, plist, delta, balanced=True)
    return LpInstance(
        variables=names,
        objective={n: 1.0 for n in names},
        rows=rows,
        delta=delta,
        paths={path_var(p): p for p in plist},
    )


def build_rebalancing_lp(
    topology: Topology,
    demand: Mapping[Pair, float],
    paths: Mapping[Pair, Sequence[Path]],
    delta: float,
    gamma: float,
) -> LpInstance:
    """Throughput minus ``gamma`` times the total on-chain rebalancing rate."""
    if gamma < 0 or math.isnan(gamma):
        raise ValueError("gamma must be nonnegative")
    plist = _collect_paths(topology, demand, paths)
    names, rows = _flow_rows(topology, demand, plist, delta, balanced=False)
    rebal = {}
    for ch in topology.channels:
        u, v = ch.key
        rebal[rebal_var(u, v)] = (u, v)
        rebal[rebal_var(v, u)] = (v, u)
    obj = {n: 1.0 for n in names}
    obj.update({n: -gamma for n in rebal})
    return LpInstance(
        variables=names + list(rebal),
        objective=obj,
        rows=rows,
        delta=delta,
        gamma=gamma,
        paths={path_var(p): p for p in plist},
        rebal=rebal,
    )


def build_bounded_rebalancing_lp(
    topology: Topology,
    demand: Mapping[Pair, float],
    paths: Mapping[Pair, Sequence[Path]],
    delta: float,
    budget: float,
    gamma: float = 0.0,
) -> LpInstance:
    """Rebalancing LP with the extra row ``sum(b) <= budget``."""
    if budget < 0 or math.isnan(budget):
        raise ValueError("budget must be nonnegative")
    inst = build_rebalancing_lp(topology, demand, paths, delta, gamma)
    inst.rows.append(Row("budget", "budget", {n: 1.0 for n in inst.rebal}, "<=", float(budget)))
    inst.budget = budget
    return inst


def routed_rate(sol: LpSolution) -> float:
    return float(sum(sol.rates.values()))


def t_curve(
    topology: Topology,
    demand: Mapping[Pair, float],
    paths: Mapping[Pair, Sequence[Path]],
    delta: float,
    budgets: Iterable[float],
) -> list[tuple[float, float]]:
    """Maximum throughput for each rebalancing budget in ``budgets``."""
    grid = [float(b) for b in budgets]
    if any(b < 0 for b in grid) or any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
        raise ValueError("budget grid must be nonnegative and strictly increasing")
    out = []
    for B in grid:
        sol = solve_lp(build_bounded_rebalancing_lp(topology, demand, paths, delta, B))
        if not sol.optimal:
            raise ValueError(f"bounded LP at B={B} is {sol.status.value}")
        out.append((B, routed_rate(sol)))
    return out


def project_onto_demand_set(rates, d: float) -> np.ndarray:
    """Euclidean projection of ``rates`` onto ``{x >= 0, sum(x) <= d}``."""
    v = np.asarray(rates, dtype=float)
    clipped = np.maximum(v, 0.0)
    if math.isinf(d) or clipped.sum() <= d:
        return clipped
    if d <= 0:
        return np.zeros_like(v)
    # the cap binds: project onto the scaled simplex sum(x) == d
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - d
    k = np.arange(1, len(u) + 1)
    hits = np.nonzero(u - css / k > 0)[0]
    # with d below rounding of the largest entry no index qualifies; rho = 0 then
    rho = hits[-1] if len(hits) else 0
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def shortest_only_paths(topology: Topology, demand: Mapping[Pair, float]) -> dict[Pair, list[Path]]:
    from .paths import lex_shortest_path

    out = {}
    for i, j in demand:
        p = lex_shortest_path(topology, i, j)
        out[(i, j)] = [p] if p else []
    return out


