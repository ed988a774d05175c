"""In-house numerical core: dense linear algebra, LP, and convex QP.

A small backend registry provides the substitution seam: anything
implementing ``solve_lp(lp, options)`` / ``solve_qp(qp, options)`` with the
documented result contracts can be registered and selected through the
configuration key ``solver.backend`` (default ``internal``).
"""

from __future__ import annotations

from typing import Mapping, Protocol

from .linsolve import as_matrix, solve_linear_system
from .lp import (
    LinearProgram,
    LPSolution,
    Residuals,
    RowSense,
    SolverOptions,
    Status,
    solve_lp,
)
from .qp import QuadraticProgram, solve_qp
from . import checks

__all__ = [
    "as_matrix",
    "solve_linear_system",
    "LinearProgram",
    "LPSolution",
    "Residuals",
    "RowSense",
    "SolverOptions",
    "Status",
    "solve_lp",
    "QuadraticProgram",
    "solve_qp",
    "checks",
    "SolverBackend",
    "register_backend",
    "available_backends",
    "resolve_backend",
]


class SolverBackend(Protocol):
    """Contract every pluggable solver backend must satisfy."""

    def solve_lp(self, lp: LinearProgram, options: SolverOptions | None = None,
                 warm_start: tuple | None = None) -> LPSolution: ...

    def solve_qp(self, qp: QuadraticProgram,
                 options: SolverOptions | None = None) -> LPSolution: ...


class _InternalBackend:
    name = "internal"

    def solve_lp(self, lp, options=None, warm_start=None):
        return solve_lp(lp, options, warm_start)

    def solve_qp(self, qp, options=None):
        return solve_qp(qp, options)


_REGISTRY: dict[str, SolverBackend] = {"internal": _InternalBackend()}


def register_backend(name: str, backend: SolverBackend) -> None:
    """Register a solver backend under ``name`` (overwrites silently)."""
    _REGISTRY[name] = backend


def available_backends() -> list[str]:
    return sorted(_REGISTRY)


def resolve_backend(config: Mapping | None = None) -> SolverBackend:
    """Look up the backend named by ``solver.backend`` in ``config``.

    ``config`` is any mapping; missing key or ``None`` selects the
    internal solver.  Unknown names raise ``KeyError`` listing what is
    actually registered.
    """
    name = "internal"
    if config:
        name = config.get("solver.backend", "internal")
    if name not in _REGISTRY:
        raise KeyError(
            f"unknown solver backend {name!r}; registered: {available_backends()}"
        )
    return _REGISTRY[name]
