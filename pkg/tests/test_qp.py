import numpy as np
import pytest
import scipy.sparse as sp

from gridcharge.numerics import (
    LinearProgram,
    QuadraticProgram,
    Status,
    checks,
    solve_lp,
    solve_qp,
)
from oracles import random_box_lp


def test_projection_onto_halfline():
    qp = QuadraticProgram(
        objective=[2.0],
        quadratic=[[-2.0]],
        a_matrix=np.zeros((0, 1)),
        senses=[],
        rhs=[],
        lower=[2.0],
        upper=[np.inf],
        offset=-1.0,
    )
    sol = solve_qp(qp)
    assert sol.status == Status.OPTIMAL
    assert sol.x[0] == pytest.approx(2.0, abs=1e-7)
    assert sol.objective == pytest.approx(-1.0, abs=1e-7)


def test_symmetric_split_on_equality():
    qp = QuadraticProgram(
        objective=[0.0, 0.0],
        quadratic=[[-2.0, 0.0], [0.0, -2.0]],
        a_matrix=[[1.0, 1.0]],
        senses=["="],
        rhs=[2.0],
        lower=[-np.inf, -np.inf],
        upper=[np.inf, np.inf],
    )
    sol = solve_qp(qp)
    assert sol.status == Status.OPTIMAL
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-6)
    assert sol.objective == pytest.approx(-2.0, abs=1e-7)


def test_zero_hessian_equals_lp():
    rng = np.random.default_rng(17)
    for _ in range(8):
        c, a, senses, b, lb, ub = random_box_lp(rng, max_vars=6, max_rows=5)
        lp_sol = solve_lp(LinearProgram(c, a, senses, b, lb, ub))
        qp_sol = solve_qp(QuadraticProgram(
            objective=c, quadratic=np.zeros((len(c), len(c))),
            a_matrix=a, senses=senses, rhs=b, lower=lb, upper=ub))
        assert qp_sol.status == Status.OPTIMAL
        assert qp_sol.objective == pytest.approx(lp_sol.objective, abs=1e-7 * (1 + abs(lp_sol.objective)))


def test_infeasible_shares_lp_certificate():
    qp = QuadraticProgram(
        objective=[0.0],
        quadratic=[[-1.0]],
        a_matrix=[[1.0]],
        senses=["<"],
        rhs=[-1.0],
        lower=[0.0],
        upper=[np.inf],
    )
    sol = solve_qp(qp)
    assert sol.status == Status.INFEASIBLE
    assert checks.farkas_gap(qp.lp_view(), sol.farkas) < 0


def test_unbounded_linear_direction():
    # curvature only on x, improving ray on y
    qp = QuadraticProgram(
        objective=[0.0, 1.0],
        quadratic=[[-2.0, 0.0], [0.0, 0.0]],
        a_matrix=[[1.0, 0.0]],
        senses=["<"],
        rhs=[1.0],
        lower=[0.0, 0.0],
        upper=[np.inf, np.inf],
    )
    sol = solve_qp(qp)
    assert sol.status == Status.UNBOUNDED
    assert sol.ray is not None
    assert float(qp.objective @ sol.ray) > 0


def test_fixed_columns_are_substituted():
    qp = QuadraticProgram(
        objective=[1.0, 3.0],
        quadratic=[[-2.0, 0.0], [0.0, -2.0]],
        a_matrix=[[1.0, 1.0]],
        senses=["<"],
        rhs=[10.0],
        lower=[0.5, 0.0],
        upper=[0.5, np.inf],
    )
    sol = solve_qp(qp)
    assert sol.status == Status.OPTIMAL
    assert sol.x[0] == pytest.approx(0.5, abs=1e-12)
    assert sol.x[1] == pytest.approx(1.5, abs=1e-6)


def test_residual_certificates():
    rng = np.random.default_rng(23)
    for _ in range(6):
        c, a, senses, b, lb, ub = random_box_lp(rng, max_vars=5, max_rows=4)
        n = len(c)
        g = rng.normal(size=(n, n))
        q = -(g @ g.T) / n - 0.1 * np.eye(n)
        qp = QuadraticProgram(objective=c, quadratic=q, a_matrix=a,
                              senses=senses, rhs=b, lower=lb, upper=ub)
        sol = solve_qp(qp)
        assert sol.status == Status.OPTIMAL
        res = sol.residuals
        assert res.primal <= 1e-6
        assert res.dual <= 1e-6
        assert res.complementarity <= 1e-6
        assert res.gap <= 1e-6


def test_sparse_quadratic_input():
    q = sp.csc_matrix(np.diag([-2.0, -4.0]))
    qp = QuadraticProgram(
        objective=[4.0, 8.0],
        quadratic=q,
        a_matrix=sp.csr_matrix(np.array([[1.0, 1.0]])),
        senses=["<"],
        rhs=[10.0],
        lower=[0.0, 0.0],
        upper=[np.inf, np.inf],
    )
    sol = solve_qp(qp)
    assert sol.status == Status.OPTIMAL
    assert np.allclose(sol.x, [2.0, 2.0], atol=1e-6)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        QuadraticProgram(
            objective=[1.0, 1.0],
            quadratic=[[0.0, 1.0], [0.0, 0.0]],
            a_matrix=[[1.0, 1.0]],
            senses=["<"],
            rhs=[1.0],
            lower=[0.0, 0.0],
            upper=[1.0, 1.0],
        ).validate()
