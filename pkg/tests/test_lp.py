import numpy as np
import pytest
import scipy.sparse as sp

from gridcharge.errors import NumericalBreakdown
from gridcharge.numerics import (
    LinearProgram,
    RowSense,
    SolverOptions,
    Status,
    checks,
    solve_lp,
)
from oracles import random_box_lp, vertex_lp_optimum


def test_single_bound_row():
    lp = LinearProgram([1.0], [[1.0]], ["<"], [3.0], [0.0], [np.inf])
    sol = solve_lp(lp)
    assert sol.status == Status.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0, abs=1e-9)
    assert sol.objective == pytest.approx(3.0, abs=1e-9)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-9)


def test_degenerate_face_vertex():
    lp = LinearProgram(
        [1.0, 1.0],
        [[1.0, 1.0], [1.0, 0.0]],
        ["<", "<"],
        [1.0, 0.6],
        [0.0, 0.0],
        [np.inf, np.inf],
    )
    sol = solve_lp(lp)
    assert sol.status == Status.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-9)
    assert -1e-9 <= sol.x[0] <= 0.6 + 1e-9
    assert sol.x[0] + sol.x[1] == pytest.approx(1.0, abs=1e-9)


def test_unbounded_with_verified_ray():
    lp = LinearProgram([1.0], np.zeros((0, 1)), [], [], [0.0], [np.inf])
    sol = solve_lp(lp)
    assert sol.status == Status.UNBOUNDED
    assert sol.ray is not None
    assert float(lp.objective @ sol.ray) > 0
    assert checks.ray_violation(lp, sol.ray) <= 1e-7


def test_unbounded_through_rows():
    lp = LinearProgram(
        [1.0, 0.0],
        [[1.0, -1.0]],
        ["<"],
        [0.0],
        [0.0, 0.0],
        [np.inf, np.inf],
    )
    sol = solve_lp(lp)
    assert sol.status == Status.UNBOUNDED
    assert float(lp.objective @ sol.ray) > 0
    assert checks.ray_violation(lp, sol.ray) <= 1e-7


def test_infeasible_with_verified_certificate():
    lp = LinearProgram([1.0], [[1.0]], ["<"], [-1.0], [0.0], [np.inf])
    sol = solve_lp(lp)
    assert sol.status == Status.INFEASIBLE
    assert sol.farkas is not None
    assert checks.farkas_gap(lp, sol.farkas) < 0


def test_equality_infeasible_certificate():
    lp = LinearProgram(
        [0.0, 0.0],
        [[1.0, 1.0], [1.0, 1.0]],
        ["=", "="],
        [1.0, 2.0],
        [-10.0, -10.0],
        [10.0, 10.0],
    )
    sol = solve_lp(lp)
    assert sol.status == Status.INFEASIBLE
    assert checks.farkas_gap(lp, sol.farkas) < 0


def test_free_variable_and_negative_bounds():
    lp = LinearProgram(
        [-1.0, 2.0],
        [[1.0, 1.0], [-1.0, 1.0]],
        ["=", "<"],
        [1.0, 0.5],
        [-np.inf, -5.0],
        [np.inf, 5.0],
    )
    sol = solve_lp(lp)
    assert sol.status == Status.OPTIMAL
    value, _ = vertex_lp_optimum(
        lp.objective, lp.a_matrix, lp.senses, lp.rhs,
        np.array([-20.0, -5.0]), np.array([20.0, 5.0]))
    assert sol.objective == pytest.approx(value, abs=1e-8)


def test_fixed_variables():
    lp = LinearProgram(
        [1.0, 1.0],
        [[1.0, 1.0]],
        ["<"],
        [4.0],
        [2.0, 0.0],
        [2.0, np.inf],
    )
    sol = solve_lp(lp)
    assert sol.status == Status.OPTIMAL
    assert sol.x[0] == pytest.approx(2.0, abs=1e-12)
    assert sol.objective == pytest.approx(4.0, abs=1e-9)


def _assert_certificates(lp, sol, tol=1e-6):
    res = sol.residuals
    assert res.primal <= tol
    assert res.dual <= tol
    assert res.complementarity <= tol
    assert res.gap <= tol


def test_random_lps_match_vertex_oracle():
    rng = np.random.default_rng(2024)
    solved = 0
    while solved < 30:
        c, a, senses, b, lb, ub = random_box_lp(rng)
        lp = LinearProgram(c, a, senses, b, lb, ub)
        sol = solve_lp(lp)
        assert sol.status == Status.OPTIMAL
        value, _ = vertex_lp_optimum(c, a, senses, b, lb, ub)
        assert value is not None
        scale = 1.0 + abs(value)
        assert abs(sol.objective - value) <= 1e-6 * scale
        _assert_certificates(lp, sol)
        solved += 1


def test_complementary_slackness():
    rng = np.random.default_rng(11)
    for _ in range(10):
        c, a, senses, b, lb, ub = random_box_lp(rng, max_vars=6, max_rows=6)
        lp = LinearProgram(c, a, senses, b, lb, ub)
        sol = solve_lp(lp)
        assert sol.status == Status.OPTIMAL
        scale = 1.0 + float(np.max(np.abs(b), initial=0.0)) + float(np.max(np.abs(sol.duals), initial=0.0))
        slack = b - a @ sol.x
        for i in range(lp.n_rows):
            if senses[i] != RowSense.EQ:
                assert abs(sol.duals[i]) * abs(slack[i]) <= 1e-6 * scale


def test_warm_start_reuses_basis():
    lp = LinearProgram(
        [1.0, 2.0, -1.0],
        [[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]],
        ["<", "<"],
        [2.0, 1.0],
        [0.0, 0.0, 0.0],
        [5.0, 5.0, 5.0],
    )
    cold = solve_lp(lp)
    assert cold.status == Status.OPTIMAL
    warm = solve_lp(lp, warm_start=cold.basis)
    assert warm.status == Status.OPTIMAL
    assert warm.objective == pytest.approx(cold.objective, abs=1e-10)
    assert warm.iterations <= cold.iterations

    # a perturbed objective over the same rows still starts from the basis
    lp2 = LinearProgram(
        [1.1, 2.0, -1.0], lp.a_matrix, lp.senses, lp.rhs, lp.lower, lp.upper)
    warm2 = solve_lp(lp2, warm_start=cold.basis)
    cold2 = solve_lp(lp2)
    assert warm2.objective == pytest.approx(cold2.objective, abs=1e-9)


def test_sparse_matrix_input_matches_dense():
    rng = np.random.default_rng(5)
    c, a, senses, b, lb, ub = random_box_lp(rng, max_vars=7, max_rows=7)
    dense = solve_lp(LinearProgram(c, a, senses, b, lb, ub))
    sparse = solve_lp(LinearProgram(c, sp.csr_matrix(a), senses, b, lb, ub))
    assert sparse.status == Status.OPTIMAL
    assert sparse.objective == pytest.approx(dense.objective, abs=1e-9)


def test_iteration_limit_raises():
    rng = np.random.default_rng(3)
    c, a, senses, b, lb, ub = random_box_lp(rng, max_vars=6, max_rows=6)
    lp = LinearProgram(c, a, senses, b, lb, ub)
    with pytest.raises(NumericalBreakdown):
        solve_lp(lp, SolverOptions(max_iter=1))


def test_validation_errors():
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["?"], [1.0], [0.0], [1.0]).validate()
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<"], [np.nan], [0.0], [1.0]).validate()
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<"], [1.0], [2.0], [1.0]).validate()
