"""Linear regions of a one-hidden-layer ReLU net inside a box."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from safetrain.dynamics import AffineLaw
from safetrain.geometry import Box, HPolytope, box_to_hpolytope, dedupe_points, vertices
from safetrain.neural.net import ReluNet

INTERIOR_TOL = 1e-9


@dataclass
class LinearRegion:
    """Cell of constant activation pattern, clipped to an abstract state.

    On the cell the hidden layer is ``h(x) = G x + g`` and the net is the
    affine law ``W2 G x + W2 g + b2``.
    """

    pattern: tuple[bool, ...]
    region: HPolytope
    G: np.ndarray
    g: np.ndarray
    law: AffineLaw
    verts: np.ndarray | None = None

    def vertices(self) -> np.ndarray:
        if self.verts is None:
            self.verts = vertices(self.region)
        return self.verts

    def bounding_box(self) -> Box:
        V = self.vertices()
        return Box(V.min(axis=0), V.max(axis=0))

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.region.contains(x, tol)

    def law_for(self, W2: np.ndarray, b2: np.ndarray) -> AffineLaw:
        """The region's law after swapping in a different output layer."""
        return AffineLaw(W2 @ self.G, W2 @ self.g + b2)


def hidden_affine(net: ReluNet, pattern) -> tuple[np.ndarray, np.ndarray]:
    mask = np.asarray(pattern, dtype=float)
    return net.W1 * mask[:, None], net.b1 * mask


def pattern_polytope(net: ReluNet, pattern, q: Box) -> HPolytope:
    """``q`` intersected with the halfspaces fixing ``pattern``."""
    poly = box_to_hpolytope(q)
    rows, rhs = [], []
    for j, active in enumerate(pattern):
        w, b = net.W1[j], net.b1[j]
        if active:  # w x + b >= 0
            rows.append(-w)
            rhs.append(b)
        else:
            rows.append(w)
            rhs.append(-b)
    return HPolytope(np.vstack([poly.A, np.array(rows).reshape(-1, net.n)]),
                     np.concatenate([poly.c, rhs]))


def enumerate_regions(net: ReluNet, q: Box) -> list[LinearRegion]:
    """All activation patterns whose cell meets ``q`` in a full-dimensional set.

    Cells are refined one neuron at a time; a branch survives only if its
    polytope has an inscribed ball of radius above 1e-9. Neurons whose
    hyperplane misses the current cell are fixed without an LP. Regions are
    returned in lexicographic pattern order (inactive before active).
    """
    if q.dim != net.n:
        raise ValueError(f"box has dim {q.dim}, net expects {net.n}")
    base = box_to_hpolytope(q)
    h = net.hidden_width
    out: list[LinearRegion] = []

    def recurse(j: int, poly: HPolytope, corners: np.ndarray, pattern: tuple[bool, ...]):
        if j == h:
            G, g = hidden_affine(net, pattern)
            law = AffineLaw(net.W2 @ G, net.W2 @ g + net.b2)
            out.append(LinearRegion(pattern, poly, G, g, law))
            return
        w, b = net.W1[j], net.b1[j]
        vals = corners @ w + b
        if np.all(vals >= 0.0) or np.all(vals <= 0.0):
            # hyperplane does not cut the cell's bounding vertices
            active = bool(np.mean(vals) > 0.0) if not np.all(vals == 0.0) else False
            sides = [active]
        else:
            sides = [False, True]
        for active in sides:
            child = poly.add_halfspace(-w if active else w, b if active else -b)
            if len(sides) == 2:
                _, r = child.chebyshev_ball()
                if r <= INTERIOR_TOL:
                    continue
                cv = vertices(child)
            else:
                cv = corners
            recurse(j + 1, child, cv, pattern + (active,))

    recurse(0, base, q.vertices(), ())
    out.sort(key=lambda r: r.pattern)
    return out


def locate_region(regions: list[LinearRegion], x, tol: float = 1e-9) -> LinearRegion | None:
    """First region (lexicographic pattern order) whose closure contains ``x``."""
    for r in regions:
        if r.contains(x, tol):
            return r
    return None


def region_vertices(regions: list[LinearRegion]) -> np.ndarray:
    """Union of the vertex sets of all regions, deduplicated."""
    if not regions:
        return np.zeros((0, 0))
    V = np.vstack([r.vertices() for r in regions])
    return dedupe_points(V)
