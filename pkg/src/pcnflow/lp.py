"""A small dense two-phase simplex solver and the LP instance container.

Bland's rule picks both the entering and the leaving variable, so pivots
never cycle and the pivot sequence is reproducible bit for bit.  Problems
here have a few hundred columns at most.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path as FsPath

import numpy as np

from .errors import MalformedFile, NumericalFailure

SENSES = ("<=", ">=", "==")
TAGS = ("demand", "capacity", "balance", "budget", "custom")


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class Row:
    tag: str
    name: str
    coeffs: dict[str, float]
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"bad sense {self.sense!r}")
        if self.tag not in TAGS:
            raise ValueError(f"bad tag {self.tag!r}")

    def activity(self, values) -> float:
        return sum(a * values.get(v, 0.0) for v, a in self.coeffs.items())

    def violation(self, values) -> float:
        lhs = self.activity(values)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class LpInstance:
    """Maximise ``objective . x`` over ``x >= 0`` subject to ``rows``.

    ``paths`` maps a path-rate variable to its node sequence and ``rebal``
    maps a rebalancing variable to its directed channel, so a solution can be
    translated back into routing terms.
    """

    variables: list[str]
    objective: dict[str, float]
    rows: list[Row]
    delta: float | None = None
    gamma: float | None = None
    budget: float | None = None
    paths: dict[str, tuple[int, ...]] = field(default_factory=dict)
    rebal: dict[str, tuple[int, int]] = field(default_factory=dict)

    def rows_tagged(self, tag: str) -> list[Row]:
        return [r for r in self.rows if r.tag == tag]

    def objective_value(self, values) -> float:
        return sum(c * values.get(v, 0.0) for v, c in self.objective.items())

    def max_violation(self, values) -> float:
        worst = max((r.violation(values) for r in self.rows if math.isfinite(r.rhs)), default=0.0)
        neg = max((-values.get(v, 0.0) for v in self.variables), default=0.0)
        return max(worst, neg)


@dataclass
class LpSolution:
    status: Status
    objective: float = math.nan
    values: dict[str, float] = field(default_factory=dict)
    duals: dict[str, float] = field(default_factory=dict)
    dual_objective: float = math.nan
    rates: dict[tuple[int, ...], float] = field(default_factory=dict)
    rebalancing: dict[tuple[int, int], float] = field(default_factory=dict)
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    nz = np.nonzero(col)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _bland(T, basis, cols, max_pivots, tol, count):
    """Maximise the objective held in the last row of T (stored as -c).

    ``cols`` bounds the set of columns allowed to enter.  Returns
    ("optimal" | "unbounded", pivots so far).
    """
    m = T.shape[0] - 1
    while True:
        obj = T[m, :cols]
        entering = np.nonzero(obj < -tol)[0]
        if entering.size == 0:
            return "optimal", count
        c = int(entering[0])
        colv = T[:m, c]
        pos = np.nonzero(colv > tol)[0]
        if pos.size == 0:
            return "unbounded", count
        ratios = T[pos, -1] / colv[pos]
        best = ratios.min()
        # Bland: among (near-)ties pick the row whose basic variable has the lowest index
        tied = pos[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(tied, key=lambda i: basis[i]))
        _pivot(T, r, c)
        basis[r] = c
        count += 1
        if count > max_pivots:
            raise NumericalFailure(f"simplex exceeded {max_pivots} pivots")


def solve_lp(inst: LpInstance, max_pivots: int = 50_000, tol: float = 1e-9) -> LpSolution:
    """Solve ``inst`` to optimality or report Infeasible / Unbounded.

    Rows whose right-hand side is infinite in the slack direction are
    vacuous and skipped (uncapped demand rows).  Duals follow the sign
    convention of the original rows: nonnegative on binding ``<=`` rows.
    """
    names = list(inst.variables)
    col_of = {v: k for k, v in enumerate(names)}
    n = len(names)
    rows = []
    for row in inst.rows:
        if math.isnan(row.rhs):
            raise NumericalFailure(f"row {row.name} has NaN rhs")
        if math.isinf(row.rhs):
            if (row.sense == "<=" and row.rhs > 0) or (row.sense == ">=" and row.rhs < 0):
                continue
            return LpSolution(Status.INFEASIBLE)
        for v in row.coeffs:
            if v not in col_of:
                raise NumericalFailure(f"row {row.name} uses unknown variable {v}")
        rows.append(row)
    m = len(rows)

    A = np.zeros((m, n))
    b = np.zeros(m)
    sense = []
    flip = np.ones(m)
    for i, row in enumerate(rows):
        for v, a in row.coeffs.items():
            A[i, col_of[v]] += a
        b[i] = row.rhs
        s = row.sense
        if b[i] < 0:
            A[i] *= -1
            b[i] *= -1
            flip[i] = -1
            s = {"<=": ">=", ">=": "<=", "==": "=="}[s]
        sense.append(s)
    c = np.array([inst.objective.get(v, 0.0) for v in names])

    n_slack = sum(1 for s in sense if s != "==")
    n_art = sum(1 for s in sense if s != "<=")
    width = n + n_slack + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = [0] * m
    art_cols = []
    k_slack, k_art = n, n + n_slack
    for i, s in enumerate(sense):
        if s == "<=":
            T[i, k_slack] = 1.0
            basis[i] = k_slack
            k_slack += 1
        elif s == ">=":
            T[i, k_slack] = -1.0
            k_slack += 1
            T[i, k_art] = 1.0
            basis[i] = k_art
            art_cols.append(k_art)
            k_art += 1
        else:
            T[i, k_art] = 1.0
            basis[i] = k_art
            art_cols.append(k_art)
            k_art += 1
    n_real = n + n_slack
    pivots = 0

    if art_cols:
        # phase one: maximise -sum(artificials)
        T[m, :] = 0.0
        for i, bc in enumerate(basis):
            if bc >= n_real:
                T[m, :] -= T[i, :]
        T[m, n_real:width] = 0.0
        _, pivots = _bland(T, basis, width, max_pivots, tol, pivots)
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if -T[m, -1] > 1e-8 * scale:
            return LpSolution(Status.INFEASIBLE, pivots=pivots)
        # drive any zero-level artificial out of the basis
        keep = []
        for i in range(m):
            if basis[i] >= n_real:
                cand = np.nonzero(np.abs(T[i, :n_real]) > 1e-9)[0]
                if cand.size:
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                    pivots += 1
                    keep.append(i)
                # otherwise the row is redundant; drop it
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[m:m + 1]])
        basis = [basis[i] for i in keep]
        T = np.delete(T, range(n_real, width), axis=1)
        m_eff = len(keep)
    else:
        keep = list(range(m))
        m_eff = m

    # phase two
    T[m_eff, :] = 0.0
    T[m_eff, :n] = -c
    for i, bc in enumerate(basis):
        if T[m_eff, bc] != 0.0:
            T[m_eff, :] -= T[m_eff, bc] * T[i, :]
    outcome, pivots = _bland(T, basis, n_real, max_pivots, tol, pivots)
    if outcome == "unbounded":
        return LpSolution(Status.UNBOUNDED, pivots=pivots)

    # Recompute the basic solution from the original data for accuracy.
    full = np.zeros((m, n_real))
    full[:, :n] = A
    k = n
    for i, s in enumerate(sense):
        if s == "<=":
            full[i, k] = 1.0
            k += 1
        elif s == ">=":
            full[i, k] = -1.0
            k += 1
    Bmat = full[keep][:, basis]
    try:
        xb = np.linalg.solve(Bmat, b[keep])
        cb = np.array([c[j] if j < n else 0.0 for j in basis])
        y_keep = np.linalg.solve(Bmat.T, cb)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"singular final basis: {exc}") from None
    x = np.zeros(n_real)
    x[basis] = xb
    x[np.abs(x) < 1e-12] = 0.0
    if (x < -1e-7 * max(1.0, float(np.abs(b).max(initial=0.0)))).any():
        raise NumericalFailure("final basis is not primal feasible")
    x = np.maximum(x, 0.0)
    y = np.zeros(m)
    y[keep] = y_keep
    y *= flip  # back to the original row orientation

    values = {v: float(x[col_of[v]]) for v in names}
    sol = LpSolution(
        Status.OPTIMAL,
        objective=float(c @ x[:n]),
        values=values,
        duals={rows[i].name: float(y[i]) for i in range(m)},
        dual_objective=float(sum(y[i] * rows[i].rhs for i in range(m))),
        pivots=pivots,
    )
    worst = inst.max_violation(values)
    scale = max(1.0, max((abs(r.rhs) for r in rows), default=1.0))
    if worst > 1e-7 * scale:
        raise NumericalFailure(f"solution violates constraints by {worst:.3g}")
    for v, p in inst.paths.items():
        if values.get(v, 0.0) > 0:
            sol.rates[p] = values[v]
    for v, e in inst.rebal.items():
        sol.rebalancing[e] = values.get(v, 0.0)
    return sol


# ---- text dump -----------------------------------------------------------
#
# obj <var> <coef> ...
# var <name> [path n0-n1-...|rebal u-v]
# row <tag> <name> <sense> <rhs> <var> <coef> ...
# meta delta|gamma|budget <value>


def _f(x: float) -> str:
    return repr(float(x))


def dumps_lp(inst: LpInstance) -> str:
    lines = []
    for key in ("delta", "gamma", "budget"):
        val = getattr(inst, key)
        if val is not None:
            lines.append(f"meta {key} {_f(val)}")
    for v in inst.variables:
        extra = ""
        if v in inst.paths:
            extra = " path " + "-".join(map(str, inst.paths[v]))
        elif v in inst.rebal:
            extra = " rebal " + "-".join(map(str, inst.rebal[v]))
        lines.append(f"var {v}{extra}")
    lines.append("obj " + " ".join(f"{v} {_f(a)}" for v, a in inst.objective.items()))
    for r in inst.rows:
        terms = " ".join(f"{v} {_f(a)}" for v, a in r.coeffs.items())
        lines.append(f"row {r.tag} {r.name} {r.sense} {_f(r.rhs)} {terms}".rstrip())
    return "\n".join(lines) + "\n"


def loads_lp(text: str, source: str = "<string>") -> LpInstance:
    inst = LpInstance([], {}, [])
    for n, raw in enumerate(text.splitlines(), 1):
        toks = raw.split()
        if not toks or toks[0].startswith("#"):
            continue
        try:
            kind = toks[0]
            if kind == "meta":
                setattr(inst, toks[1], float(toks[2]))
            elif kind == "var":
                inst.variables.append(toks[1])
                if len(toks) == 4:
                    nodes = tuple(int(x) for x in toks[3].split("-"))
                    if toks[2] == "path":
                        inst.paths[toks[1]] = nodes
                    else:
                        inst.rebal[toks[1]] = (nodes[0], nodes[1])
            elif kind == "obj":
                inst.objective = {toks[k]: float(toks[k + 1]) for k in range(1, len(toks), 2)}
            elif kind == "row":
                coeffs = {toks[k]: float(toks[k + 1]) for k in range(5, len(toks), 2)}
                inst.rows.append(Row(toks[1], toks[2], coeffs, toks[3], float(toks[4])))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise MalformedFile(source, n, str(exc)) from None
    return inst


def dump_lp(inst: LpInstance, path) -> None:
    FsPath(path).write_text(dumps_lp(inst))


def load_lp(path) -> LpInstance:
    return loads_lp(FsPath(path).read_text(), str(path))
