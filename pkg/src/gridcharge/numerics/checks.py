"""Residual certification shared by the LP and QP paths.

Every returned optimum is measured against four families of conditions:
primal feasibility, dual feasibility (multiplier signs against row senses
and bound finiteness), complementary slackness, and the duality gap.  The
same functions verify infeasibility and unboundedness certificates, so a
result object never leaves the numerics package unchecked.

Sign conventions for a maximize problem:

* rows ``a'x <= b`` carry duals ``y >= 0``; ``>=`` rows ``y <= 0``;
  equalities are unrestricted,
* stationarity reads ``g - A'y + zl - zu = 0`` with ``zl, zu >= 0`` and
  ``g`` the objective gradient (``c`` for an LP, ``c + Qx`` for a QP),
* the reduced cost is ``d = g - A'y = zu - zl``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import NumericalBreakdown
from .lp import LinearProgram, LPSolution, Residuals, RowSense, SolverOptions


def _row_values(lp: LinearProgram, x: np.ndarray) -> np.ndarray:
    return np.asarray(lp.a_matrix @ x).ravel()


def split_bound_duals(d: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Split reduced costs into nonnegative bound duals ``(zl, zu)``.

    ``zl`` is attributed to finite lower bounds, ``zu`` to finite upper
    bounds; mass on an infinite side is a dual-feasibility violation and
    is left in place so the caller can measure it.
    """
    zl = np.where(np.isfinite(lower), np.maximum(-d, 0.0), 0.0)
    zu = np.where(np.isfinite(upper), np.maximum(d, 0.0), 0.0)
    return zl, zu


def solution_residuals(
    lp: LinearProgram,
    x: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    quadratic: np.ndarray | None = None,
) -> Residuals:
    """Measure all four residual families for a primal/dual pair.

    ``d`` must be the reduced-cost vector ``g - A'y``.  ``quadratic``
    supplies ``Q`` when the objective is ``c'x + x'Qx/2``.
    """
    row = _row_values(lp, x)
    le = lp.senses == RowSense.LE
    ge = lp.senses == RowSense.GE
    eq = lp.senses == RowSense.EQ
    finite_lo = lp.lower[np.isfinite(lp.lower)]
    finite_hi = lp.upper[np.isfinite(lp.upper)]
    b_scale = 1.0 + max(
        float(np.max(np.abs(lp.rhs), initial=0.0)),
        float(np.max(np.abs(finite_lo), initial=0.0)),
        float(np.max(np.abs(finite_hi), initial=0.0)),
    )
    x_scale = 1.0 + (float(np.max(np.abs(x))) if lp.n_cols else 0.0)

    primal = 0.0
    if lp.n_rows:
        over = np.where(le, row - lp.rhs, 0.0)
        under = np.where(ge, lp.rhs - row, 0.0)
        mismatch = np.where(eq, np.abs(row - lp.rhs), 0.0)
        primal = float(np.max(np.maximum.reduce([over, under, mismatch, np.zeros_like(row)])))
    lo_viol = np.where(np.isfinite(lp.lower), lp.lower - x, -np.inf)
    hi_viol = np.where(np.isfinite(lp.upper), x - lp.upper, -np.inf)
    bound_viol = float(np.max(np.maximum(lo_viol, hi_viol), initial=0.0))
    primal = max(primal, bound_viol) / b_scale

    # dual sign violations against senses and infinite bounds
    dual = 0.0
    if lp.n_rows:
        dual = float(np.max(np.concatenate([
            np.maximum(-y[le], 0.0) if le.any() else np.zeros(1),
            np.maximum(y[ge], 0.0) if ge.any() else np.zeros(1),
        ]), initial=0.0))
    inf_lo = ~np.isfinite(lp.lower)
    inf_hi = ~np.isfinite(lp.upper)
    stray = np.maximum(
        np.where(inf_lo, np.maximum(-d, 0.0), 0.0),
        np.where(inf_hi, np.maximum(d, 0.0), 0.0),
    )
    dual = max(dual, float(np.max(stray, initial=0.0)))
    g_scale = 1.0 + float(np.max(np.abs(d), initial=0.0))
    dual /= g_scale

    zl, zu = split_bound_duals(d, lp.lower, lp.upper)
    comp_cols = np.maximum(
        zl * np.where(np.isfinite(lp.lower), np.abs(x - lp.lower), 0.0),
        zu * np.where(np.isfinite(lp.upper), np.abs(lp.upper - x), 0.0),
    )
    comp = float(np.max(comp_cols, initial=0.0))
    if lp.n_rows:
        slack = np.where(le, lp.rhs - row, np.where(ge, row - lp.rhs, 0.0))
        comp = max(comp, float(np.max(np.abs(y) * np.abs(slack), initial=0.0)))
    comp /= (g_scale * x_scale)

    primal_obj = float(lp.objective @ x)
    if quadratic is not None:
        qx = quadratic @ x
        primal_obj += 0.5 * float(x @ qx)
        dual_obj = float(y @ lp.rhs) - float(zl @ np.where(np.isfinite(lp.lower), lp.lower, 0.0)) \
            + float(zu @ np.where(np.isfinite(lp.upper), lp.upper, 0.0)) - 0.5 * float(x @ qx)
    else:
        dual_obj = float(y @ lp.rhs) - float(zl @ np.where(np.isfinite(lp.lower), lp.lower, 0.0)) \
            + float(zu @ np.where(np.isfinite(lp.upper), lp.upper, 0.0))
    gap = abs(primal_obj - dual_obj) / (1.0 + abs(primal_obj))
    return Residuals(primal=primal, dual=dual, complementarity=comp, gap=gap)


def certify_lp_solution(lp: LinearProgram, sol: LPSolution,
                        options: SolverOptions) -> None:
    """Attach residuals to an optimal solution and fail loudly when they
    exceed the configured tolerances."""
    res = solution_residuals(lp, sol.x, sol.duals, sol.reduced_costs)
    sol.residuals = res
    if res.primal > 100 * options.feas_tol or res.dual > 100 * options.feas_tol:
        raise NumericalBreakdown(
            f"solution failed certification: primal {res.primal:.3e}, "
            f"dual {res.dual:.3e}"
        )
    if res.gap > 100 * options.gap_tol:
        raise NumericalBreakdown(f"duality gap {res.gap:.3e} exceeds tolerance")


def farkas_gap(lp: LinearProgram, y: np.ndarray, tol: float = 1e-6) -> float:
    """Value of the infeasibility certificate; negative proves infeasible.

    For any feasible ``x``: ``y'Ax <= y'b`` (by the sign pattern of ``y``)
    while ``y'Ax >= sum_j min over the box of (A'y)_j x_j``.  The returned
    gap is ``y'b`` minus that lower bound; a significant multiplier on an
    unusable infinite bound invalidates the certificate (+inf).
    """
    coefs = np.asarray(lp.a_matrix.T @ y).ravel()
    scale = 1.0 + float(np.max(np.abs(y), initial=0.0))
    le = lp.senses == RowSense.LE
    ge = lp.senses == RowSense.GE
    if float(np.max(np.maximum(-y[le], 0.0), initial=0.0)) > tol * scale:
        return np.inf
    if float(np.max(np.maximum(y[ge], 0.0), initial=0.0)) > tol * scale:
        return np.inf
    significant = np.abs(coefs) > tol * scale
    limit = np.where(coefs > 0, lp.lower, lp.upper)
    if np.any(significant & ~np.isfinite(limit)):
        return np.inf
    safe_limit = np.where(significant, limit, 0.0)
    bound_sum = float(np.sum(np.where(significant, coefs, 0.0) * safe_limit))
    return float(y @ lp.rhs) - bound_sum


def ray_violation(lp: LinearProgram, ray: np.ndarray) -> float:
    """Worst violation of the recession-cone conditions for an improving
    ray; values near zero certify unboundedness."""
    gain = float(lp.objective @ ray)
    scale = 1.0 + float(np.max(np.abs(ray), initial=0.0))
    if gain <= 1e-9 * scale:
        return np.inf
    row = np.asarray(lp.a_matrix @ ray).ravel()
    le = lp.senses == RowSense.LE
    ge = lp.senses == RowSense.GE
    eq = lp.senses == RowSense.EQ
    viol = 0.0
    if lp.n_rows:
        viol = float(np.max(np.concatenate([
            np.maximum(row[le], 0.0) if le.any() else np.zeros(1),
            np.maximum(-row[ge], 0.0) if ge.any() else np.zeros(1),
            np.abs(row[eq]) if eq.any() else np.zeros(1),
        ]), initial=0.0))
    lo_bad = np.where(np.isfinite(lp.lower), np.maximum(-ray, 0.0), 0.0)
    hi_bad = np.where(np.isfinite(lp.upper), np.maximum(ray, 0.0), 0.0)
    viol = max(viol, float(np.max(np.maximum(lo_bad, hi_bad), initial=0.0)))
    return viol / scale
