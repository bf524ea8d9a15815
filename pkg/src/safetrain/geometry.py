"""Boxes, halfspace polytopes and the small amount of computational geometry
the synthesis chain needs.

All sets are closed: a box contains its faces and two boxes that only touch
along a face intersect.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

VERTEX_TOL = 1e-9
MAX_VERTEX_DIM = 6


class UnboundedPolytope(ValueError):
    """Raised when a vertex set is requested for an unbounded polytope."""


def _as_vec(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``{x : lo <= x <= hi}``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _as_vec(self.lo, "lo")
        hi = _as_vec(self.hi, "hi")
        if lo.shape != hi.shape:
            raise ValueError(f"lo/hi shape mismatch: {lo.shape} vs {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"empty box: lo[{bad}]={lo[bad]} > hi[{bad}]={hi[bad]}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_intervals(cls, intervals: Iterable[Sequence[float]]) -> "Box":
        pairs = [tuple(iv) for iv in intervals]
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def point(cls, x) -> "Box":
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def measure(self) -> float:
        return measure(self)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        _check_dims(self, other)
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def intersects(self, other: "Box") -> bool:
        return box_intersects(self, other)

    def intersection(self, other: "Box") -> "Box | None":
        _check_dims(self, other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def hull(self, other: "Box") -> "Box":
        _check_dims(self, other)
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def minkowski_sum(self, other: "Box") -> "Box":
        _check_dims(self, other)
        return Box(self.lo + other.lo, self.hi + other.hi)

    def inflate(self, eps: float) -> "Box":
        return Box(self.lo - eps, self.hi + eps)

    def vertices(self) -> np.ndarray:
        """All ``2**dim`` corners (duplicates kept for degenerate axes)."""
        corners = itertools.product(*[(l, h) for l, h in zip(self.lo, self.hi)])
        return np.array(list(corners), dtype=float).reshape(-1, self.dim)

    def to_hpolytope(self) -> "HPolytope":
        return box_to_hpolytope(self)

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["lo"], d["hi"])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return self.lo.shape == other.lo.shape and bool(
            np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)
        )

    def __hash__(self) -> int:
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self) -> str:
        ivs = ", ".join(f"[{l:.6g}, {h:.6g}]" for l, h in zip(self.lo, self.hi))
        return f"Box({ivs})"


def _check_dims(a: Box, b: Box) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def box_intersects(a: Box, b: Box) -> bool:
    """Closed-set intersection test; boxes sharing only a face intersect."""
    _check_dims(a, b)
    return bool(np.all(np.maximum(a.lo, b.lo) <= np.minimum(a.hi, b.hi)))


def boxes_intersecting(box: Box, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    """Vectorised `box_intersects` of one box against stacked bounds (k, n)."""
    return np.all((np.maximum(los, box.lo) <= np.minimum(his, box.hi)), axis=1)


def measure(b: Box) -> float:
    """Lebesgue measure, i.e. the product of side lengths."""
    return float(np.prod(b.hi - b.lo))


@dataclass(frozen=True, eq=False)
class HPolytope:
    """Polytope ``{x : A x <= c}``."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if A.shape[0] != c.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows but c has {c.shape[0]} entries")
        A.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, x, tol: float = VERTEX_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(self.A @ x <= self.c + tol))

    def contains_many(self, X: np.ndarray, tol: float = VERTEX_TOL) -> np.ndarray:
        return np.all(X @ self.A.T <= self.c + tol, axis=1)

    def intersect(self, other: "HPolytope") -> "HPolytope":
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return HPolytope(np.vstack([self.A, other.A]), np.concatenate([self.c, other.c]))

    def add_halfspace(self, a, b: float) -> "HPolytope":
        return HPolytope(np.vstack([self.A, np.asarray(a, float)]), np.append(self.c, b))

    def chebyshev_ball(self) -> tuple[np.ndarray | None, float]:
        """Largest inscribed ball (centre, radius); radius ``-inf`` if empty.

        The radius is capped at 1, which is all the callers need to separate
        full-dimensional sets from thin or empty ones.
        """
        from safetrain.lp import LpProblem, Status, solve_lp

        n = self.dim
        norms = np.linalg.norm(self.A, axis=1)
        # variables: x (free), r in [-1, 1]; maximise r
        prob = LpProblem(
            objective=np.concatenate([np.zeros(n), [-1.0]]),
            bounds=[(-math.inf, math.inf)] * n + [(-1.0, 1.0)],
        )
        for a, nrm, ci in zip(self.A, norms, self.c):
            prob.add_le(np.concatenate([a, [nrm]]), ci)
        sol = solve_lp(prob)
        if sol.status is not Status.OPTIMAL:
            return None, -math.inf
        r = -sol.objective_value
        if r < 0:
            return None, -math.inf
        return sol.x[:n], r

    def is_empty(self) -> bool:
        _, r = self.chebyshev_ball()
        return r < 0

    def has_interior(self, tol: float = VERTEX_TOL) -> bool:
        _, r = self.chebyshev_ball()
        return r > tol

    def vertices(self) -> np.ndarray:
        return vertices(self)

    def bounding_box(self) -> Box:
        V = vertices(self)
        if V.shape[0] == 0:
            raise ValueError("empty polytope has no bounding box")
        return Box(V.min(axis=0), V.max(axis=0))

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "c": self.c.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HPolytope":
        return cls(np.array(d["A"], dtype=float).reshape(len(d["c"]), -1), d["c"])


def box_to_hpolytope(b: Box) -> HPolytope:
    """``lo <= x <= hi`` as ``[I; -I] x <= [hi; -lo]``."""
    eye = np.eye(b.dim)
    return HPolytope(np.vstack([eye, -eye]), np.concatenate([b.hi, -b.lo]))


def _has_box_rows(A: np.ndarray) -> bool:
    n = A.shape[1]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        pos = np.any(np.all(np.isclose(A, e, atol=0.0), axis=1))
        neg = np.any(np.all(np.isclose(A, -e, atol=0.0), axis=1))
        if not (pos and neg):
            return False
    return True


def _recession_direction(A: np.ndarray) -> np.ndarray | None:
    from safetrain.lp import LpProblem, Status, solve_lp

    n = A.shape[1]
    for i in range(n):
        for sign in (1.0, -1.0):
            obj = np.zeros(n)
            obj[i] = -sign
            prob = LpProblem(objective=obj, bounds=[(-1.0, 1.0)] * n)
            for a in A:
                prob.add_le(a, 0.0)
            sol = solve_lp(prob)
            if sol.status is Status.OPTIMAL and -sol.objective_value > VERTEX_TOL:
                return sol.x
    return None


def dedupe_points(P: np.ndarray, tol: float = VERTEX_TOL) -> np.ndarray:
    """Drop points closer than ``tol`` (infinity norm) to an earlier kept one."""
    if P.shape[0] == 0:
        return P
    order = np.lexsort(P.T[::-1])
    P = P[order]
    kept: list[np.ndarray] = []
    for p in P:
        if not any(np.max(np.abs(p - k)) <= tol for k in kept):
            kept.append(p)
    return np.array(kept)


def vertices(p: HPolytope) -> np.ndarray:
    """Exact vertex set of a bounded polytope by basis enumeration.

    Every choice of ``n`` rows with an invertible submatrix is solved; the
    solutions satisfying all rows within 1e-9 are kept and deduplicated.
    Returns an ``(k, n)`` array sorted lexicographically (``k = 0`` if empty).
    """
    A, c = p.A, p.c
    n = p.dim
    if n > MAX_VERTEX_DIM:
        raise ValueError(f"vertex enumeration limited to dimension <= {MAX_VERTEX_DIM}, got {n}")
    if n == 0:
        return np.zeros((0, 0))
    bounded_by_rows = _has_box_rows(A)
    verts = np.zeros((0, n))
    if A.shape[0] >= n:
        combos = np.array(list(itertools.combinations(range(A.shape[0]), n)), dtype=int)
        subs = A[combos]  # (k, n, n)
        rhs = c[combos]
        dets = np.linalg.det(subs)
        scale = np.prod(np.linalg.norm(subs, axis=2), axis=1)
        ok = np.abs(dets) > 1e-12 * np.maximum(scale, 1e-300)
        if np.any(ok):
            sols = np.linalg.solve(subs[ok], rhs[ok][..., None])[..., 0]
            feas = np.all(sols @ A.T <= c + VERTEX_TOL, axis=1)
            verts = dedupe_points(sols[feas])
    if not bounded_by_rows:
        if verts.shape[0] > 0:
            d = _recession_direction(A)
            if d is not None:
                raise UnboundedPolytope(f"polytope is unbounded along direction {d}")
        elif not p.is_empty():
            raise UnboundedPolytope("nonempty polytope without vertices is unbounded")
    return verts


# -- circular axes --------------------------------------------------------


def wrap_point(x, bounds: Box, circular: Sequence[int]) -> np.ndarray:
    """Map coordinates on circular axes into ``[lo, hi)`` of ``bounds``."""
    x = np.array(x, dtype=float)
    for ax in circular:
        lo, hi = bounds.lo[ax], bounds.hi[ax]
        period = hi - lo
        x[..., ax] = lo + np.mod(x[..., ax] - lo, period)
    return x


def wrap_box(box: Box, bounds: Box, circular: Sequence[int]) -> list[Box]:
    """Split a box whose circular coordinates leave ``bounds`` into pieces
    inside ``bounds`` along those axes.

    Seam points are duplicated on both sides, so a piece ending on the upper
    seam also yields a degenerate piece on the lower one (and vice versa).
    """
    pieces = [box]
    for ax in circular:
        lo_b, hi_b = bounds.lo[ax], bounds.hi[ax]
        period = hi_b - lo_b
        nxt: list[Box] = []
        for b in pieces:
            ivs = _wrap_interval(b.lo[ax], b.hi[ax], lo_b, hi_b, period)
            for a, z in ivs:
                lo = b.lo.copy()
                hi = b.hi.copy()
                lo[ax], hi[ax] = a, z
                nxt.append(Box(lo, hi))
        pieces = nxt
    return pieces


def _wrap_interval(a: float, z: float, lo: float, hi: float, period: float) -> list[tuple[float, float]]:
    if z - a >= period:
        return [(lo, hi)]
    k = math.floor((a - lo) / period)
    a2, z2 = a - k * period, z - k * period
    if a2 >= hi:  # rounding at the seam
        a2, z2 = a2 - period, z2 - period
    out: list[tuple[float, float]] = []
    if z2 <= hi:
        out.append((a2, z2))
        if z2 == hi:
            out.append((lo, lo))
    else:
        out.append((a2, hi))
        out.append((lo, min(z2 - period, hi)))
    if a2 == lo:
        out.append((hi, hi))
    return out


# -- cover test ------------------------------------------------------------


def box_covered(box: Box, covers: Sequence[Box]) -> bool:
    """True iff ``box`` is a subset of the union of ``covers``.

    Recursive box subtraction: remove the first intersecting cover, split
    what is left into at most ``2n`` closed slabs and recurse on the rest.
    """
    for i, c in enumerate(covers):
        if box_intersects(box, c):
            rest = list(covers[:i]) + list(covers[i + 1:])
            return all(box_covered(piece, rest) for piece in _subtract(box, c))
    return False


def _subtract(box: Box, c: Box) -> list[Box]:
    pieces = []
    lo = box.lo.copy()
    hi = box.hi.copy()
    for d in range(box.dim):
        if lo[d] < c.lo[d]:
            plo, phi = lo.copy(), hi.copy()
            phi[d] = c.lo[d]
            pieces.append(Box(plo, phi))
            lo[d] = c.lo[d]
        if hi[d] > c.hi[d]:
            plo, phi = lo.copy(), hi.copy()
            plo[d] = c.hi[d]
            pieces.append(Box(plo, phi))
            hi[d] = c.hi[d]
    return pieces
