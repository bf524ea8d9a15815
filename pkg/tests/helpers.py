"""Shared fixtures and independent oracles for the test-suite."""
from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from safetrain.abstraction import AbstractState, PosteriorGraph, StateKind
from safetrain.geometry import Box
from safetrain.liveness import PredecessorGraph

# five-state picture: three normal cells in a row, then goal and obstacle
Q1, Q2, Q3, GOAL, OBST = 0, 1, 2, 3, 4
P1, P2 = 0, 1


def five_state_graph() -> PosteriorGraph:
    """q1 -P2-> obstacle, q3 reaches the obstacle under both partitions,
    q2 is safe under both."""
    states = [
        AbstractState(Q1, Box([1.0], [2.0])),
        AbstractState(Q2, Box([2.0], [3.0])),
        AbstractState(Q3, Box([4.0], [5.0])),
        AbstractState(GOAL, Box([3.0], [4.0]), StateKind.GOAL),
        AbstractState(OBST, Box([0.0], [1.0]), StateKind.OBSTACLE),
    ]
    edges = {
        (Q1, P1): {Q1, Q2},
        (Q1, P2): {OBST, Q1},
        (Q2, P1): {GOAL},
        (Q2, P2): {Q1, Q2},
        (Q3, P1): {OBST, Q3},
        (Q3, P2): {OBST},
    }
    return PosteriorGraph.from_edges(states, [P1, P2], edges)


def five_state_predecessors(grid: int = 6) -> PredecessorGraph:
    """Sampled edges restricted to the safe partitions of the five-state graph."""
    g = five_state_graph()
    full = np.ones(grid, dtype=bool)
    edges = {(Q1, P1): (Q2,), (Q2, P1): (GOAL,), (Q2, P2): (Q1,)}
    masks = {(Q1, P1): {Q2: full.copy()}, (Q2, P1): {GOAL: full.copy()},
             (Q2, P2): {Q1: full.copy()}}
    boxes = {s: g.states[s].region for s in (Q1, Q2, GOAL)}
    return PredecessorGraph([Q1, Q2, GOAL], GOAL, edges, masks, {}, boxes)


def unrolled_unsafe(n_states: int, normal: set[int], terminal_bad: set[int],
                    partitions: list[int], edges: dict) -> set[int]:
    """Brute force: apply the one-step 'every partition can hit U' map
    ``n_states`` times from the obstacle set."""
    U = set(terminal_bad)
    for _ in range(n_states):
        U = U | {q for q in normal
                 if all(set(edges.get((q, P), ())) & U for P in partitions)}
    return U


def floyd_warshall(nodes: list[int], arcs: set[tuple[int, int]]) -> dict[tuple[int, int], float]:
    idx = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    for a, b in arcs:
        if a != b:
            D[idx[a], idx[b]] = 1.0
    for k in range(n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    return {(a, b): D[idx[a], idx[b]] for a in nodes for b in nodes}


def lp_vertex_oracle(A: np.ndarray, b: np.ndarray, c: np.ndarray):
    """min c.x s.t. A x <= b by enumerating every basic solution.

    Returns ("optimal", value), ("infeasible", None) or ("unbounded", None).
    Unboundedness is decided by a recession direction test on the
    (assumed pointed) feasible set: the LP is unbounded iff some extreme
    ray d (A d <= 0) has c.d < 0, found by enumerating the rays of the cone
    {A d <= 0, sum |d| normalised} through its own vertex enumeration.
    """
    m, n = A.shape
    best = None
    feasible = False
    for rows in itertools.combinations(range(m), n):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + 1e-9):
            feasible = True
            v = float(c @ x)
            best = v if best is None else min(best, v)
    if not feasible:
        return "infeasible", None
    # extreme rays: d with A d <= 0 and n-1 tight rows, scaled to |d|_inf = 1
    for rows in itertools.combinations(range(m), n - 1):
        M = A[list(rows)]
        if n == 1:
            cands = [np.array([1.0]), np.array([-1.0])]
        else:
            _, s, vt = np.linalg.svd(M)
            if np.sum(s > 1e-10) < n - 1:
                continue
            d = vt[-1]
            cands = [d, -d]
        for d in cands:
            if np.all(A @ d <= 1e-9) and c @ d < -1e-9:
                return "unbounded", None
    return "optimal", best


# acceptance criterion -> (title, passed, detail); printed by conftest
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@contextmanager
def criterion(k: int, title: str):
    """Record the outcome of acceptance criterion ``k``.

    The body sets ``rec["ok"]`` and ``rec["detail"]``; an exception counts
    as a failure.
    """
    rec = {"ok": False, "detail": ""}
    try:
        yield rec
    except BaseException as exc:
        rec["ok"] = False
        rec["detail"] = rec["detail"] or f"{type(exc).__name__}: {exc}"
        raise
    finally:
        ACCEPTANCE[k] = (title, bool(rec["ok"]), rec["detail"])
