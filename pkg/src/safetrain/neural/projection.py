"""Output-layer projection onto a controller partition.

Minimises the vertex bound on the worst 1-norm output change over the
abstract state, subject to every region law lying in the partition box.
Only the output layer moves, so the linear regions are unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from safetrain.dynamics import ControllerPartition
from safetrain.geometry import Box
from safetrain.lp import LpProblem, Status, solve_lp
from safetrain.neural.net import ReluNet
from safetrain.neural.regions import LinearRegion, enumerate_regions, region_vertices

# Laws are pushed this far inside the partition so that solver round-off
# can never leave them outside it.
PROJECTION_MARGIN = 1e-9


class ProjectionInfeasible(RuntimeError):
    def __init__(self, message: str, regions: list[tuple[bool, ...]]):
        super().__init__(message)
        self.regions = regions


class ProjectionFailed(RuntimeError):
    """The LP solver gave up (pivot limit); distinct from infeasibility."""


@dataclass
class Projection:
    W2: np.ndarray
    b2: np.ndarray
    bound: float
    regions: list[LinearRegion]
    lp_value: float = math.nan

    def apply(self, net: ReluNet) -> ReluNet:
        return net.with_output_layer(self.W2, self.b2)


def _shrunk(lo: np.ndarray, hi: np.ndarray, margin: float):
    lo2, hi2 = lo + margin, hi - margin
    ok = hi2 >= lo2
    return np.where(ok, lo2, lo), np.where(ok, hi2, hi)


def project_weights(net: ReluNet, q: Box, P: ControllerPartition,
                    regions: list[LinearRegion] | None = None) -> Projection:
    """Solve the epigraph LP.

    Variables are laid out as ``[W2' (m*h), b2' (m), t, s (m*h), v (m)]``.
    """
    if regions is None:
        regions = enumerate_regions(net, q)
    if not regions:
        raise ValueError("no linear regions inside the abstract state")
    m, h, n = net.m, net.hidden_width, net.n
    nw, nb = m * h, m
    iW, ib, it = 0, nw, nw + nb
    iS, iV = it + 1, it + 1 + nw
    nvar = iV + nb
    inf = math.inf
    bounds = [(-inf, inf)] * (nw + nb) + [(0.0, inf)] * (1 + nw + nb)
    obj = np.zeros(nvar)
    obj[it] = 1.0
    prob = LpProblem(obj, bounds=bounds)

    V = region_vertices(regions)
    H = net.hidden(V)  # (k, h)
    for hv in H:
        row = np.zeros(nvar)
        for i in range(m):
            row[iS + i * h: iS + (i + 1) * h] = hv
        row[iV:iV + nb] = 1.0
        row[it] = -1.0
        prob.add_le(row, 0.0)

    W2, b2 = net.W2, net.b2
    for k in range(nw):
        r = np.zeros(nvar); r[iW + k] = 1.0; r[iS + k] = -1.0
        prob.add_le(r, W2.ravel()[k])
        r = np.zeros(nvar); r[iW + k] = -1.0; r[iS + k] = -1.0
        prob.add_le(r, -W2.ravel()[k])
    for i in range(nb):
        r = np.zeros(nvar); r[ib + i] = 1.0; r[iV + i] = -1.0
        prob.add_le(r, b2[i])
        r = np.zeros(nvar); r[ib + i] = -1.0; r[iV + i] = -1.0
        prob.add_le(r, -b2[i])

    Klo, Khi = P.K_bounds()
    blo, bhi = P.b_bounds()
    Klo, Khi = _shrunk(Klo, Khi, PROJECTION_MARGIN)
    blo, bhi = _shrunk(blo, bhi, PROJECTION_MARGIN)
    for reg in regions:
        # K[i, c] = sum_j W2'[i, j] G[j, c];  b[i] = sum_j W2'[i, j] g[j] + b2'[i]
        for i in range(m):
            for c in range(n):
                row = np.zeros(nvar)
                row[iW + i * h: iW + (i + 1) * h] = reg.G[:, c]
                prob.add_le(row, Khi[i, c])
                prob.add_le(-row, -Klo[i, c])
            row = np.zeros(nvar)
            row[iW + i * h: iW + (i + 1) * h] = reg.g
            row[ib + i] = 1.0
            prob.add_le(row, bhi[i])
            prob.add_le(-row, -blo[i])

    sol = solve_lp(prob)
    if sol.status is Status.INFEASIBLE:
        raise ProjectionInfeasible(
            f"no output layer puts all {len(regions)} region laws inside partition {P.id}",
            [r.pattern for r in regions if not P.contains_law(r.law)])
    if sol.status is not Status.OPTIMAL:
        raise ProjectionFailed(f"projection LP ended with status {sol.status.value}")
    x = sol.x
    W2n = x[iW:iW + nw].reshape(m, h)
    b2n = x[ib:ib + nb].copy()
    # bound recomputed from the rounded weights rather than read off t
    bound = deviation_bound(net, net.with_output_layer(W2n, b2n), regions)
    return Projection(W2n, b2n, max(bound, float(x[it])), regions, float(x[it]))


def deviation_bound(net: ReluNet, projected: ReluNet, regions: list[LinearRegion]) -> float:
    """Vertex bound on ``max_x ||projected(x) - net(x)||_1`` over the regions."""
    if not np.array_equal(net.W1, projected.W1) or not np.array_equal(net.b1, projected.b1):
        raise ValueError("nets must share the hidden layer")
    V = region_vertices(regions)
    H = net.hidden(V)
    dW = np.abs(projected.W2 - net.W2)
    db = np.abs(projected.b2 - net.b2)
    return float(np.max(H @ dW.sum(axis=0)) + db.sum()) if len(V) else float(db.sum())


def deviation_bound_check(net: ReluNet, projected: ReluNet, q: Box,
                          regions: list[LinearRegion] | None = None) -> float:
    if regions is None:
        regions = enumerate_regions(net, q)
    return deviation_bound(net, projected, regions)
