"""System models, exact stepping and interval over-approximation of the
one-step image under affine feedback with parameters drawn from a box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from safetrain.geometry import Box

POST_SLACK = 1e-12


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time control-affine model ``x+ = g(x) + B u + w``.

    ``kind`` is ``"unicycle"`` (state ``(x, y, heading)``, scalar turn-rate
    input, constant speed ``v``) or ``"integrator"`` (``x+ = x + B u`` with
    ``B[i, i % m] = dt``).
    """

    kind: str
    n: int
    m: int
    dt: float = 0.1
    v: float = 1.0
    disturbance: Box | None = None

    def __post_init__(self):
        if self.kind == "unicycle":
            if (self.n, self.m) != (3, 1):
                raise ValueError("unicycle has n=3, m=1")
        elif self.kind == "integrator":
            if self.n < 1 or self.m < 1:
                raise ValueError("integrator chain needs n, m >= 1")
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.disturbance is not None and self.disturbance.dim != self.n:
            raise ValueError("disturbance box must live in the state space")

    @classmethod
    def unicycle(cls, v: float = 1.0, dt: float = 0.1, disturbance: Box | None = None) -> "SystemModel":
        return cls("unicycle", 3, 1, dt=dt, v=v, disturbance=disturbance)

    @classmethod
    def integrator_chain(cls, n: int, m: int = 2, dt: float = 0.1,
                         disturbance: Box | None = None) -> "SystemModel":
        return cls("integrator", n, m, dt=dt, disturbance=disturbance)

    @property
    def num_params(self) -> int:
        return self.m * (self.n + 1)

    @property
    def B(self) -> np.ndarray:
        if self.kind == "unicycle":
            return np.array([[0.0], [0.0], [self.dt]])
        B = np.zeros((self.n, self.m))
        for i in range(self.n):
            B[i, i % self.m] = self.dt
        return B

    def drift(self, X: np.ndarray) -> np.ndarray:
        """Uncontrolled part ``g(x)`` for a batch ``(..., n)``."""
        X = np.asarray(X, dtype=float)
        if self.kind == "unicycle":
            out = X.copy()
            out[..., 0] += self.dt * self.v * np.cos(X[..., 2])
            out[..., 1] += self.dt * self.v * np.sin(X[..., 2])
            return out
        return X.copy()

    def step_batch(self, X: np.ndarray, U: np.ndarray, W: np.ndarray | None = None) -> np.ndarray:
        out = self.drift(X) + np.asarray(U, dtype=float) @ self.B.T
        if W is not None:
            out = out + W
        return out

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dt": self.dt}
        if self.kind == "unicycle":
            d["v"] = self.v
        else:
            d["n"] = self.n
            d["m"] = self.m
        d["disturbance"] = None if self.disturbance is None else self.disturbance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        dist = d.get("disturbance")
        dist = None if dist is None else Box.from_dict(dist)
        if d["kind"] == "unicycle":
            return cls.unicycle(v=float(d.get("v", 1.0)), dt=float(d.get("dt", 0.1)), disturbance=dist)
        if d["kind"] == "integrator":
            return cls.integrator_chain(int(d["n"]), int(d.get("m", 2)), dt=float(d.get("dt", 0.1)),
                                        disturbance=dist)
        raise ValueError(f"unknown model kind {d['kind']!r}")


@dataclass(frozen=True)
class AffineLaw:
    """``u = K x + b`` with ``K`` of shape ``(m, n)``."""

    K: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if K.shape[0] != b.shape[0]:
            raise ValueError(f"K has {K.shape[0]} rows, b has {b.shape[0]}")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "b", b)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.K.T + self.b

    def flat(self) -> np.ndarray:
        """Row-major ``K`` entries followed by ``b``."""
        return np.concatenate([self.K.reshape(-1), self.b])

    @classmethod
    def from_flat(cls, theta, m: int, n: int) -> "AffineLaw":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[: m * n].reshape(m, n), theta[m * n: m * n + m])


@dataclass(frozen=True)
class ControllerPartition:
    """A box of affine-law parameters, flattened as in `AffineLaw.flat`."""

    id: int
    bounds: Box
    m: int = 1
    n: int = 3

    def __post_init__(self):
        if self.bounds.dim != self.m * (self.n + 1):
            raise ValueError(f"partition box has dim {self.bounds.dim}, expected {self.m * (self.n + 1)}")

    def K_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.m * self.n
        return (self.bounds.lo[:k].reshape(self.m, self.n), self.bounds.hi[:k].reshape(self.m, self.n))

    def b_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.m * self.n
        return self.bounds.lo[k:], self.bounds.hi[k:]

    def center_law(self) -> AffineLaw:
        return AffineLaw.from_flat(self.bounds.center, self.m, self.n)

    def contains_law(self, law: AffineLaw, tol: float = 0.0) -> bool:
        return self.bounds.contains(law.flat(), tol=tol)

    @classmethod
    def singleton(cls, law: AffineLaw, id: int = -1) -> "ControllerPartition":
        m, n = law.K.shape
        theta = law.flat()
        return cls(id, Box(theta, theta), m=m, n=n)

    def grid(self, resolution: int) -> np.ndarray:
        """Parameter samples: a per-axis grid (vertices included) plus the centre."""
        if resolution < 2:
            raise ValueError("grid resolution must be >= 2")
        axes = [np.linspace(l, h, resolution) if h > l else np.array([l])
                for l, h in zip(self.bounds.lo, self.bounds.hi)]
        pts = np.array(list(itertools.product(*axes)), dtype=float)
        c = self.bounds.center
        if not np.any(np.all(pts == c, axis=1)):
            pts = np.vstack([c[None, :], pts])
        return pts

    def to_dict(self) -> dict:
        return {"id": self.id, "m": self.m, "n": self.n, "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerPartition":
        return cls(int(d["id"]), Box.from_dict(d["bounds"]), m=int(d["m"]), n=int(d["n"]))


def step(model: SystemModel, x, u, w=None) -> np.ndarray:
    """Exact next state; the heading is not wrapped."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (model.n,) or u.shape != (model.m,):
        raise ValueError(f"expected x in R^{model.n}, u in R^{model.m}")
    W = None if w is None else np.asarray(w, dtype=float)
    return model.step_batch(x, u, W)


# -- interval arithmetic ----------------------------------------------------


def imul(a_lo, a_hi, b_lo, b_hi):
    """Elementwise interval product."""
    cands = np.stack([a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi])
    return cands.min(axis=0), cands.max(axis=0)


def interval_cos(lo: float, hi: float) -> tuple[float, float]:
    """Exact range of cos over [lo, hi] (extrema at multiples of pi)."""
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    vals = [math.cos(lo), math.cos(hi)]
    k = math.ceil(lo / math.pi)
    while k * math.pi <= hi:
        vals.append(1.0 if k % 2 == 0 else -1.0)
        k += 1
    return min(vals), max(vals)


def interval_sin(lo: float, hi: float) -> tuple[float, float]:
    """Exact range of sin over [lo, hi] (extrema at pi/2 + multiples of pi)."""
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    vals = [math.sin(lo), math.sin(hi)]
    k = math.ceil((lo - math.pi / 2) / math.pi)
    while math.pi / 2 + k * math.pi <= hi:
        vals.append(1.0 if k % 2 == 0 else -1.0)
        k += 1
    return min(vals), max(vals)


def control_range(q: Box, P: ControllerPartition) -> Box:
    """Interval hull of ``{K x + b : x in q, (K, b) in P}``."""
    Klo, Khi = P.K_bounds()
    blo, bhi = P.b_bounds()
    plo, phi = imul(Klo, Khi, q.lo[None, :], q.hi[None, :])
    return Box(plo.sum(axis=1) + blo, phi.sum(axis=1) + bhi)


def interval_post(model: SystemModel, q: Box, P: ControllerPartition) -> Box:
    """Box enclosing ``{f(x, K x + b) + w : x in q, (K, b) in P, w in W}``.

    The linear part is grouped per state coordinate before the interval
    product, i.e. ``x+_i = sum_j (A_ij + (B K)_ij) x_j + (B b)_i + nl_i(x)``,
    which is never looser than evaluating ``x + B [u]`` with a separate
    control range.
    """
    n = model.n
    B = model.B
    Klo, Khi = P.K_bounds()
    blo, bhi = P.b_bounds()
    # interval coefficients of the closed-loop linear part: I + B K
    clo, chi = imul(B[:, :, None], B[:, :, None], Klo[None, :, :], Khi[None, :, :])
    clo = clo.sum(axis=1) + np.eye(n)
    chi = chi.sum(axis=1) + np.eye(n)
    tlo, thi = imul(clo, chi, q.lo[None, :], q.hi[None, :])
    lo = tlo.sum(axis=1)
    hi = thi.sum(axis=1)
    olo, ohi = imul(B, B, blo[None, :], bhi[None, :])
    lo = lo + olo.sum(axis=1)
    hi = hi + ohi.sum(axis=1)
    if model.kind == "unicycle":
        c_lo, c_hi = interval_cos(q.lo[2], q.hi[2])
        s_lo, s_hi = interval_sin(q.lo[2], q.hi[2])
        r = model.dt * model.v
        lo[0] += min(r * c_lo, r * c_hi)
        hi[0] += max(r * c_lo, r * c_hi)
        lo[1] += min(r * s_lo, r * s_hi)
        hi[1] += max(r * s_lo, r * s_hi)
    if model.disturbance is not None:
        lo = lo + model.disturbance.lo
        hi = hi + model.disturbance.hi
    return Box(lo - POST_SLACK, hi + POST_SLACK)


# -- predecessor membership --------------------------------------------------


def pre_hits(model: SystemModel, X: np.ndarray, P: ControllerPartition, targets_lo: np.ndarray,
             targets_hi: np.ndarray, k_grid: int, wrap=None):
    """For sample states ``X (s, n)`` and target boxes ``(t, n)``, find which
    states some gridded law in ``P`` steps (undisturbed) into each target.

    Returns ``(hits (s, t) bool, witness (s, t) int)`` where ``witness`` is
    the index of the first parameter sample that works, or -1. ``wrap`` maps
    next states onto canonical coordinates (circular axes).
    """
    thetas = P.grid(k_grid)
    m, n = model.m, model.n
    Ks = thetas[:, : m * n].reshape(-1, m, n)
    bs = thetas[:, m * n:]
    U = np.einsum("kmn,sn->skm", Ks, X) + bs[None, :, :]
    nxt = model.drift(X)[:, None, :] + U @ model.B.T
    if wrap is not None:
        nxt = wrap(nxt)
    inside = np.all((nxt[:, :, None, :] >= targets_lo[None, None]) &
                    (nxt[:, :, None, :] <= targets_hi[None, None]), axis=3)  # (s, k, t)
    hits = inside.any(axis=1)
    witness = np.where(hits, inside.argmax(axis=1), -1)
    return hits, witness, thetas


def pre_membership(model: SystemModel, x, q_target: Box, P: ControllerPartition, k_grid: int = 5,
                   wrap=None) -> AffineLaw | None:
    """Search the parameter grid of ``P`` for a law mapping ``x`` into ``q_target``.

    Returns the first witnessing law, or ``None``. A ``None`` answer may be a
    false negative; a returned law is always a genuine witness.
    """
    X = np.asarray(x, dtype=float)[None, :]
    hits, witness, thetas = pre_hits(model, X, P, q_target.lo[None, :], q_target.hi[None, :],
                                     k_grid, wrap)
    if not hits[0, 0]:
        return None
    return AffineLaw.from_flat(thetas[witness[0, 0]], model.m, model.n)
