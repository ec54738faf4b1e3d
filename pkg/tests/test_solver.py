import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from aggbounds.errors import DimensionError, ValidationError
from aggbounds.mdp_core import policy_iteration, value_iteration
from aggbounds.patrol_model import DESK_A, build_patrol_mdp
from aggbounds.solver import (LpProblem, build_exact_lp, certify, occupancy_duals, solve_lp,
                              solve_mdp_exact_lp)

from conftest import random_mdp, seeds


def lp(c, A, b, heads=None):
    return LpProblem(np.asarray(c, float), sp.csr_matrix(np.asarray(A, float)), np.asarray(b, float), heads)


def assert_certified(problem, sol, tol=1e-8):
    res = certify(problem, sol.primal, sol.dual)
    assert res["primal_infeasibility"] <= tol
    assert res["dual_infeasibility"] <= tol
    assert res["dual_negativity"] <= tol
    assert res["complementarity"] <= tol
    assert res["duality_gap"] <= tol


def test_single_bound():
    p = lp([1.0], [[1.0]], [3.0])
    sol = solve_lp(p)
    assert sol.optimal
    assert sol.primal[0] == pytest.approx(3.0)
    assert sol.dual[0] == pytest.approx(1.0)


def test_two_var_degenerate_family():
    p = lp([1, 1], [[1, 0], [0, 1], [1, 1]], [1, 2, 4])
    sol = solve_lp(p)
    assert sol.objective_value == pytest.approx(4.0)
    v = sol.primal
    assert v[0] >= 1 - 1e-9 and v[1] >= 2 - 1e-9 and v.sum() == pytest.approx(4.0)
    assert_certified(p, sol)


def test_exact_lp_two_cycle(two_cycle):
    sol = solve_lp(build_exact_lp(two_cycle, [1.0, 1.0]))
    np.testing.assert_allclose(sol.primal, [4 / 3, 2 / 3], atol=1e-12)
    sol2 = solve_mdp_exact_lp(two_cycle, [1.0, 1.0])
    np.testing.assert_allclose(sol2.primal, [4 / 3, 2 / 3], atol=1e-12)


def test_phase_one_without_heads():
    # rows with mixed signs defeat the head-based start
    p = lp([1, 2], [[1, -1], [-1, 3], [1, 1]], [0, 1, 2])
    sol = solve_lp(p)
    ref = linprog([1, 2], A_ub=-np.array([[1, -1], [-1, 3], [1, 1]]), b_ub=-np.array([0, 1, 2]),
                  bounds=[(None, None)] * 2, method="highs")
    assert sol.objective_value == pytest.approx(ref.fun, abs=1e-9)
    assert_certified(p, sol)


def test_unbounded_ray():
    p = lp([-1.0, 0.0], [[1, 0], [0, 1]], [0, 0])
    sol = solve_lp(p)
    assert sol.status == "unbounded"
    assert p.objective @ sol.ray < 0
    assert np.all(p.A @ sol.ray >= -1e-12)


def test_infeasible_farkas():
    p = lp([1.0], [[1.0], [-1.0]], [1.0, 0.0])
    sol = solve_lp(p)
    assert sol.status == "infeasible"
    y = sol.farkas
    assert np.all(y >= -1e-12)
    assert np.abs(p.A.T @ y).max() <= 1e-12
    assert p.b @ y > 0


def test_text_roundtrip():
    p = lp([1, -2.5, 0], [[1, 0, 2], [0, 1, 1]], [1, -3])
    q = LpProblem.from_text(p.to_text())
    np.testing.assert_array_equal(q.A.toarray(), p.A.toarray())
    np.testing.assert_array_equal(q.b, p.b)
    dense = LpProblem.from_text("min 1 1\n1 0 >= 1\n0 1 >= 2\n")
    assert solve_lp(dense).objective_value == pytest.approx(3.0)
    with pytest.raises(ValidationError):
        LpProblem.from_text("max 1\n")
    with pytest.raises(DimensionError):
        LpProblem.from_text("min 1 1\n1 >= 0\n")


def test_problem_validation():
    with pytest.raises(DimensionError):
        lp([1.0, 1.0], [[1.0]], [0.0])
    with pytest.raises(ValidationError, match="negative entry"):
        build_exact_lp(random_mdp(np.random.default_rng(0), n=3), [1, -1, 1])


def test_exact_lp_c_independent_patrol():
    m = build_patrol_mdp(DESK_A).mdp
    v_ones = solve_mdp_exact_lp(m, np.ones(m.num_states)).primal
    e0 = np.zeros(m.num_states)
    e0[0] = 1.0
    v_e0 = solve_mdp_exact_lp(m, e0).primal
    assert np.abs(v_ones - v_e0).max() <= 1e-6
    v, _ = value_iteration(m, 1e-11)
    assert np.abs(v_ones - v).max() <= 1e-7


def test_exact_lp_zero_cost_still_feasible(two_cycle):
    sol = solve_mdp_exact_lp(two_cycle, [0.0, 0.0])
    assert sol.optimal
    assert np.all(build_exact_lp(two_cycle, [0, 0]).A @ sol.primal >= two_cycle.rewards - 1e-12)


def test_simplex_matches_occupancy_objective():
    m = random_mdp(np.random.default_rng(3), n=6)
    c = np.random.default_rng(4).uniform(0.1, 1, m.num_states)
    sol = solve_lp(build_exact_lp(m, c))
    _, pi, _ = policy_iteration(m)
    mu = occupancy_duals(m, pi, c)
    assert sol.objective_value == pytest.approx(m.rewards @ mu, rel=1e-10)


# properties -----------------------------------------------------------------------

@settings(max_examples=80, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 9))
def test_random_lp_against_highs(seed, n, extra):
    rng = np.random.default_rng(seed)
    K = n + extra
    A = rng.integers(-3, 4, size=(K, n)).astype(float)  # small integers create degeneracy
    v0 = rng.integers(-2, 3, n).astype(float)
    b = A @ v0 - rng.integers(0, 2, K)
    c = A.T @ (rng.integers(0, 2, K) * rng.integers(1, 3, K))
    p = lp(c, A, b)
    ref = linprog(c, A_ub=-A, b_ub=-b, bounds=[(None, None)] * n, method="highs")
    sol = solve_lp(p)
    if ref.status == 0:
        assert sol.optimal
        assert sol.objective_value == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))
        assert_certified(p, sol)
    else:
        assert ref.status == 3 and sol.status == "unbounded"


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_exact_lp_primal_is_vstar(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng)
    v, _ = value_iteration(m, 1e-12)
    for _ in range(5):
        c = rng.uniform(0.01, 2, m.num_states)
        sol = solve_lp(build_exact_lp(m, c))
        assert np.abs(sol.primal - v).max() <= 1e-7
        assert_certified(build_exact_lp(m, c), sol)
        scaled = solve_mdp_exact_lp(m, 7.5 * c).primal
        assert np.abs(scaled - v).max() <= 1e-6
