import numpy as np
import pytest

from gridcharge.numerics import (
    LinearProgram,
    Status,
    available_backends,
    register_backend,
    resolve_backend,
)


def test_default_backend_solves():
    backend = resolve_backend({})
    lp = LinearProgram([1.0], [[1.0]], ["<"], [2.0], [0.0], [np.inf])
    sol = backend.solve_lp(lp)
    assert sol.status == Status.OPTIMAL
    assert sol.objective == pytest.approx(2.0, abs=1e-9)


def test_registry_round_trip():
    class Stub:
        def solve_lp(self, lp, options=None, warm_start=None):
            return "lp"

        def solve_qp(self, qp, options=None):
            return "qp"

    register_backend("stub-backend", Stub())
    assert "stub-backend" in available_backends()
    backend = resolve_backend({"solver.backend": "stub-backend"})
    assert backend.solve_lp(None) == "lp"


def test_unknown_backend_is_reported():
    with pytest.raises(KeyError):
        resolve_backend({"solver.backend": "no-such-backend"})
