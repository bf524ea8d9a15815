"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Problems here have tens of variables at most (output-layer weights plus
epigraph variables of the projection, or a handful of coordinates for
region feasibility), so the solver favours determinism over speed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-9
DEFAULT_MAX_PIVOTS = 10**6


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class LpProblem:
    """minimise ``objective @ x`` subject to rows and per-variable bounds.

    Rows are ``(a, rel, b)`` with ``rel`` one of ``"<="``, ``"=="`` (``">="``
    is accepted and negated). Bounds default to ``x >= 0``.
    """

    objective: np.ndarray
    constraints: list[tuple[np.ndarray, str, float]] = field(default_factory=list)
    bounds: list[tuple[float, float]] | None = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        if self.objective.size == 0:
            raise ValueError("LP needs at least one variable")
        if self.bounds is None:
            self.bounds = [(0.0, math.inf)] * self.objective.size
        if len(self.bounds) != self.objective.size:
            raise ValueError("one (lo, hi) bound pair per variable required")
        for row in self.constraints:
            self._check_row(row[0])

    @property
    def num_vars(self) -> int:
        return self.objective.size

    def _check_row(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != self.num_vars:
            raise ValueError(f"row has {a.size} coefficients, expected {self.num_vars}")
        if not np.all(np.isfinite(a)):
            raise ValueError("constraint coefficients must be finite")
        return a

    def add_le(self, a, b: float) -> None:
        self.constraints.append((self._check_row(a), "<=", float(b)))

    def add_ge(self, a, b: float) -> None:
        self.constraints.append((-self._check_row(a), "<=", -float(b)))

    def add_eq(self, a, b: float) -> None:
        self.constraints.append((self._check_row(a), "==", float(b)))


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    pivots: int = 0

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def _standard_form(p: LpProblem):
    """Rewrite as ``min c'y, G y <= h, y >= 0`` plus a map back to ``x``.

    x_j = lo + y (finite lo), hi - y (only hi finite) or y+ - y- (free);
    finite ``hi`` with finite ``lo`` becomes the row ``y <= hi - lo``.
    """
    n = p.num_vars
    cols: list[tuple[int, float]] = []  # (original var, sign)
    offset = np.zeros(n)
    extra_rows: list[tuple[int, float]] = []  # (y column, upper bound)
    for j, (lo, hi) in enumerate(p.bounds):
        lo, hi = float(lo), float(hi)
        if lo > hi:
            return None
        if math.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    m = len(cols)
    M = np.zeros((n, m))  # x = offset + M y
    for k, (j, s) in enumerate(cols):
        M[j, k] = s

    rows, rhs = [], []
    for a, rel, b in p.constraints:
        a = np.asarray(a, dtype=float)
        ay = a @ M
        by = b - a @ offset
        if rel == "<=":
            rows.append(ay)
            rhs.append(by)
        elif rel == "==":
            rows.append(ay)
            rhs.append(by)
            rows.append(-ay)
            rhs.append(-by)
        elif rel == ">=":
            rows.append(-ay)
            rhs.append(-by)
        else:
            raise ValueError(f"unknown relation {rel!r}")
    for k, ub in extra_rows:
        e = np.zeros(m)
        e[k] = 1.0
        rows.append(e)
        rhs.append(ub)
    G = np.array(rows, dtype=float).reshape(len(rows), m)
    h = np.array(rhs, dtype=float)
    cy = p.objective @ M
    const = float(p.objective @ offset)
    return G, h, cy, const, M, offset


class _Tableau:
    def __init__(self, T: np.ndarray, basis: list[int], max_pivots: int):
        self.T = T
        self.basis = basis
        self.pivots = 0
        self.max_pivots = max_pivots

    def pivot(self, r: int, c: int) -> None:
        T = self.T
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, c] = 0.0
        T[r, c] = 1.0
        self.basis[r] = c
        self.pivots += 1

    def run(self, ncols: int) -> Status | None:
        """Minimise the objective held in the last row over columns < ncols."""
        T = self.T
        while True:
            if self.pivots >= self.max_pivots:
                return Status.NUMERICAL_FAILURE
            red = T[-1, :ncols]
            cand = np.nonzero(red < -PIVOT_TOL)[0]
            if cand.size == 0:
                return None
            c = int(cand[0])  # Bland: lowest index entering
            colv = T[:-1, c]
            pos = np.nonzero(colv > PIVOT_TOL)[0]
            if pos.size == 0:
                return Status.UNBOUNDED
            ratios = T[:-1, -1][pos] / colv[pos]
            best = ratios.min()
            tied = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = int(min(tied, key=lambda i: self.basis[i]))  # Bland: lowest leaving
            self.pivot(r, c)


def solve_lp(p: LpProblem, max_pivots: int = DEFAULT_MAX_PIVOTS) -> LpSolution:
    """Solve ``p``; never raises for infeasible or unbounded problems."""
    n = p.num_vars
    nan = np.full(n, np.nan)
    sf = _standard_form(p)
    if sf is None:
        return LpSolution(Status.INFEASIBLE, nan, math.nan)
    G, h, cy, const, M, offset = sf
    k, m = G.shape

    if k == 0:
        if np.any(cy < -PIVOT_TOL):
            return LpSolution(Status.UNBOUNDED, nan, -math.inf)
        x = offset.copy()
        return LpSolution(Status.OPTIMAL, x, float(p.objective @ x))

    # G y + s = h; rows with h < 0 are negated and get an artificial.
    neg = h < 0
    nart = int(neg.sum())
    width = m + k + nart + 1
    T = np.zeros((k + 1, width))
    sign = np.where(neg, -1.0, 1.0)
    T[:k, :m] = G * sign[:, None]
    T[:k, m:m + k] = np.diag(sign)
    T[:k, -1] = h * sign
    basis = [0] * k
    art_rows = np.nonzero(neg)[0]
    for a_idx, r in enumerate(art_rows):
        T[r, m + k + a_idx] = 1.0
        basis[r] = m + k + a_idx
    for r in np.nonzero(~neg)[0]:
        basis[r] = m + r
    tab = _Tableau(T, basis, max_pivots)

    if nart:
        # phase 1: minimise the sum of artificials
        T[-1, :] = 0.0
        for r in art_rows:
            T[-1, :] -= T[r, :]
        T[-1, m + k:m + k + nart] = 0.0
        st = tab.run(width - 1)
        if st is Status.NUMERICAL_FAILURE:
            return LpSolution(st, nan, math.nan, tab.pivots)
        scale = max(1.0, float(np.max(np.abs(h))))
        if -T[-1, -1] > FEAS_TOL * scale:
            return LpSolution(Status.INFEASIBLE, nan, math.nan, tab.pivots)
        # drive remaining artificials out of the basis
        drop = []
        for r in range(k):
            if tab.basis[r] >= m + k:
                row = T[r, :m + k]
                nz = np.nonzero(np.abs(row) > PIVOT_TOL)[0]
                if nz.size:
                    tab.pivot(r, int(nz[0]))
                else:
                    drop.append(r)
        if drop:
            keep = [r for r in range(k) if r not in drop] + [k]
            T = T[keep]
            tab.T = T
            tab.basis = [tab.basis[r] for r in keep[:-1]]
        T = np.hstack([T[:, :m + k], T[:, -1:]])
        tab.T = T

    # phase 2
    ncols = m + k
    T = tab.T
    cost = np.concatenate([cy, np.zeros(k)])
    T[-1, :] = 0.0
    T[-1, :ncols] = cost
    for r, b in enumerate(tab.basis):
        if cost[b] != 0.0:
            T[-1, :] -= cost[b] * T[r, :]
    st = tab.run(ncols)
    if st is Status.UNBOUNDED:
        return LpSolution(st, nan, -math.inf, tab.pivots)
    if st is Status.NUMERICAL_FAILURE:
        return LpSolution(st, nan, math.nan, tab.pivots)

    y_full = np.zeros(ncols)
    y_full[tab.basis] = T[:-1, -1]
    y_full = _refine(G, h, tab.basis, y_full, m, k)
    y = np.maximum(y_full[:m], 0.0)
    x = offset + M @ y
    return LpSolution(Status.OPTIMAL, x, float(p.objective @ x), tab.pivots)


def _refine(G, h, basis, y_full, m, k):
    """Recompute the basic solution from the original data.

    The tableau accumulates rounding over many pivots; a direct solve with
    the final basis is far more accurate.
    """
    A = np.hstack([G, np.eye(k)])
    B = A[:, basis]
    try:
        yb = np.linalg.solve(B, h)
    except np.linalg.LinAlgError:
        return y_full
    if not np.all(np.isfinite(yb)):
        return y_full
    out = np.zeros_like(y_full)
    out[basis] = yb
    # keep the tableau answer if refinement made things worse
    def viol(v):
        return max(0.0, float(-v.min(initial=0.0)), float(np.max(np.abs(A @ v - h), initial=0.0)))
    return out if viol(out) <= viol(y_full) else y_full


def constraint_violation(p: LpProblem, x: np.ndarray) -> float:
    """Largest violation of any row or bound at ``x`` (0 if feasible)."""
    worst = 0.0
    for a, rel, b in p.constraints:
        v = float(np.dot(a, x) - b)
        if rel == "<=":
            worst = max(worst, v)
        elif rel == ">=":
            worst = max(worst, -v)
        else:
            worst = max(worst, abs(v))
    for xi, (lo, hi) in zip(x, p.bounds):
        worst = max(worst, lo - xi, xi - hi)
    return worst
