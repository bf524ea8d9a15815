import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import lp_vertex_oracle
from safetrain.lp import LpProblem, Status, constraint_violation, solve_lp


def _lp(c, A=(), b=(), bounds=None):
    p = LpProblem(np.asarray(c, float), bounds=bounds)
    for a, bi in zip(A, b):
        p.add_le(a, bi)
    return p


def test_textbook_maximisation():
    # max 3x + 5y  s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
    sol = solve_lp(_lp([-3, -5], [[1, 0], [0, 2], [3, 2]], [4, 12, 18]))
    assert sol.status is Status.OPTIMAL
    assert np.allclose(sol.x, [2, 6])
    assert sol.objective_value == pytest.approx(-36)


def test_infeasible():
    sol = solve_lp(_lp([1, 1], [[1, 1], [-1, -1]], [1, -2]))
    assert sol.status is Status.INFEASIBLE
    assert np.all(np.isnan(sol.x))


def test_unbounded():
    sol = solve_lp(_lp([-1, 0], [[0, 1]], [1]))
    assert sol.status is Status.UNBOUNDED
    assert sol.objective_value == -math.inf


def test_equality_and_ge_rows():
    p = LpProblem(np.array([1.0, 2.0]))
    p.add_eq([1, 1], 3)
    p.add_ge([1, 0], 1)
    sol = solve_lp(p)
    assert sol.ok
    assert np.allclose(sol.x, [3, 0])


def test_free_and_upper_bounded_variables():
    # min x - y with x in [-10, 2], y free, -1 <= x + y <= 5
    p = LpProblem(np.array([1.0, -1.0]), bounds=[(-math.inf, 2.0), (-math.inf, math.inf)])
    p.add_ge([1, 1], -1)
    p.add_le([1, 1], 5)
    p.add_le([-1, 0], 10)
    sol = solve_lp(p)
    assert sol.ok
    assert sol.objective_value == pytest.approx(-25.0)  # x = -10, y = 15
    assert constraint_violation(p, sol.x) <= 1e-9


def test_fixed_variable_bounds():
    p = LpProblem(np.array([1.0, 1.0]), bounds=[(2.0, 2.0), (0.0, 1.0)])
    sol = solve_lp(p)
    assert sol.ok and np.allclose(sol.x, [2, 0])


def test_degenerate_cycling_example_terminates():
    # Beale's example cycles under Dantzig's rule without anti-cycling
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    b = [0, 0, 1]
    sol = solve_lp(_lp(c, A, b))
    assert sol.status is Status.OPTIMAL
    assert sol.objective_value == pytest.approx(-0.05)


def test_pivot_limit_reports_failure():
    sol = solve_lp(_lp([-3, -5], [[1, 0], [0, 2], [3, 2]], [4, 12, 18]), max_pivots=1)
    assert sol.status is Status.NUMERICAL_FAILURE


def test_row_length_checked():
    p = LpProblem(np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        p.add_le([1.0], 1.0)


def test_no_constraints():
    assert solve_lp(LpProblem(np.array([1.0, 2.0]))).objective_value == 0.0
    assert solve_lp(LpProblem(np.array([-1.0]))).status is Status.UNBOUNDED


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 3), st.integers(3, 6))
def test_matches_vertex_enumeration(seed, n, m):
    rng = np.random.default_rng(seed)
    A = rng.integers(-4, 5, (m, n)).astype(float)
    b = rng.integers(-3, 6, m).astype(float)
    c = rng.integers(-4, 5, n).astype(float)
    # free variables with a fixed box keeps the feasible set pointed
    A = np.vstack([A, np.eye(n), -np.eye(n)]) if rng.random() < 0.5 else A
    b = np.concatenate([b, np.full(2 * n, 10.0)]) if len(b) < len(A) else b
    if np.linalg.matrix_rank(A) < n:
        return
    status, value = lp_vertex_oracle(A, b, c)
    sol = solve_lp(_lp(c, A, b, bounds=[(-math.inf, math.inf)] * n))
    assert sol.status.value == status
    if status == "optimal":
        assert sol.objective_value == pytest.approx(value, abs=1e-6)
        assert np.all(A @ sol.x <= b + 1e-7)


def test_single_variable_cases():
    p = LpProblem(np.array([1.0]))
    p.add_ge([1.0], 3.0)
    sol = solve_lp(p)
    assert sol.ok and sol.x[0] == pytest.approx(3.0) and sol.objective_value == pytest.approx(3.0)
    q = LpProblem(np.array([-1.0]))
    q.add_ge([1.0], 0.0)
    assert solve_lp(q).status is Status.UNBOUNDED


def test_two_covering_constraints_against_oracle():
    # min x + y s.t. x + 2y >= 2, 2x + y >= 2, x, y >= 0
    A = np.array([[-1.0, -2.0], [-2.0, -1.0], [-1.0, 0.0], [0.0, -1.0]])
    b = np.array([-2.0, -2.0, 0.0, 0.0])
    status, value = lp_vertex_oracle(A, b, np.array([1.0, 1.0]))
    sol = solve_lp(_lp([1, 1], A, b))
    assert status == "optimal" and sol.ok
    assert sol.objective_value == pytest.approx(value) == pytest.approx(4 / 3)
    assert constraint_violation(_lp([1, 1], A, b), sol.x) <= 1e-8
