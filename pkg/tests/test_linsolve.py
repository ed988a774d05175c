import numpy as np
import pytest

from gridcharge.errors import SingularMatrix
from gridcharge.numerics import as_matrix, solve_linear_system


def test_identity_system():
    x = solve_linear_system(np.eye(2), np.array([3.0, -1.0]))
    assert np.allclose(x, [3.0, -1.0], atol=0.0)


def test_hand_elimination_system():
    a = np.array([[2.0, -1.0], [-1.0, 2.0]])
    b = np.array([1.0, -1.0])
    x = solve_linear_system(a, b)
    assert np.allclose(x, [1.0 / 3.0, -1.0 / 3.0], atol=1e-12)


def test_singular_matrix_raises():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SingularMatrix):
        solve_linear_system(a, np.array([1.0, 2.0]))


def test_near_singular_scaled_matrix_raises():
    a = np.array([[1e9, 1e9], [1e9, 1e9 + 1e-6]])
    with pytest.raises(SingularMatrix):
        solve_linear_system(a, np.array([1.0, 2.0]))


def test_round_trip_residual():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        a = rng.normal(size=(n, n)) + n * np.eye(n)
        b = rng.normal(size=n)
        x = solve_linear_system(a, b)
        scale = max(1.0, float(np.max(np.abs(b))))
        assert float(np.max(np.abs(a @ x - b))) <= 1e-9 * scale


def test_matrix_rhs():
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([[1.0, 0.0], [0.0, 1.0]])
    x = solve_linear_system(a, b)
    assert np.allclose(a @ x, np.eye(2), atol=1e-12)


def test_as_matrix_validation():
    with pytest.raises(ValueError):
        as_matrix([1.0, 2.0])
    with pytest.raises(ValueError):
        as_matrix([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        as_matrix([[1.0, 0.0]], rows=2, cols=2)
    m = as_matrix([[1.0, 2.0]], rows=1, cols=2)
    assert m.shape == (1, 2)
