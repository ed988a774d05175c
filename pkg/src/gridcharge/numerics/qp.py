"""Convex quadratic programming by a primal-dual interior-point method.

Problems are stated in maximize form to match the LP module:

    maximize    c' x + x' Q x / 2 + offset      (Q symmetric NSD)
    subject to  A x  {<=, =, >=}  b
                lb <= x <= ub

The solver adds slacks for inequality rows, splits unbounded-both-ways
columns into nonnegative pairs so every variable carries a barrier term,
and runs a Mehrotra-style predictor-corrector.  Each Newton step is
reduced to normal equations ``(A H^{-1} A' + delta I) v = r`` where the
barrier-augmented Hessian ``H`` is inverted block by block (its sparsity
graph decomposes into small components for the programs built here), and
the reduced matrix is factored densely by Cholesky.  Constraint storage
may be sparse; factorizations stay dense.

Feasibility is decided up front by the simplex phase 1, so an infeasible
program returns the same verified Farkas certificate the LP path would
produce.  Unbounded programs are certified by a recession-cone LP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ..errors import NumericalBreakdown
from .lp import (
    LinearProgram,
    LPSolution,
    RowSense,
    SolverOptions,
    Status,
    solve_lp,
)


@dataclass
class QuadraticProgram:
    """Maximize ``objective' x + x' quadratic x / 2 + offset``."""

    objective: np.ndarray
    quadratic: object         # symmetric NSD, dense or sparse
    a_matrix: object
    senses: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if not sp.issparse(self.quadratic):
            self.quadratic = np.asarray(self.quadratic, dtype=float)
        if not sp.issparse(self.a_matrix):
            self.a_matrix = np.asarray(self.a_matrix, dtype=float)
        self.senses = np.asarray(self.senses, dtype="<U1")
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)

    @property
    def n_rows(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.a_matrix.shape[1]

    def lp_view(self) -> LinearProgram:
        """The constraint system with only the linear objective."""
        return LinearProgram(
            objective=self.objective,
            a_matrix=self.a_matrix,
            senses=self.senses,
            rhs=self.rhs,
            lower=self.lower,
            upper=self.upper,
        )

    def validate(self) -> None:
        self.lp_view().validate()
        n = self.n_cols
        if self.quadratic.shape != (n, n):
            raise ValueError("quadratic matrix shape does not match columns")
        dense_q = self.quadratic.toarray() if sp.issparse(self.quadratic) else self.quadratic
        if not np.all(np.isfinite(dense_q)):
            raise ValueError("quadratic entries must be finite")
        scale = 1.0 + float(np.max(np.abs(dense_q)))
        if float(np.max(np.abs(dense_q - dense_q.T))) > 1e-8 * scale:
            raise ValueError("quadratic matrix must be symmetric")

    def objective_value(self, x: np.ndarray) -> float:
        qx = np.asarray(self.quadratic @ x).ravel()
        return float(self.objective @ x) + 0.5 * float(x @ qx) + self.offset


class _BlockInverter:
    """Blockwise inverse of ``P + diag(d)`` over the sparsity components
    of ``P``; singleton components reduce to scalar reciprocals."""

    def __init__(self, p_min):
        pat = sp.csr_matrix(p_min) if not sp.issparse(p_min) else p_min.tocsr()
        n = pat.shape[0]
        structure = sp.csr_matrix(
            (np.ones_like(pat.data), pat.indices, pat.indptr), shape=pat.shape)
        n_comp, labels = connected_components(structure, directed=False)
        self.n = n
        self.singletons = np.ones(n, dtype=bool)
        self.blocks: list[np.ndarray] = []
        counts = np.bincount(labels, minlength=n_comp)
        for comp in np.nonzero(counts > 1)[0]:
            idx = np.nonzero(labels == comp)[0]
            self.blocks.append(idx)
            self.singletons[idx] = False
        self.p_diag = np.asarray(pat.diagonal()).ravel().copy()
        self.p_blocks = [pat[idx][:, idx].toarray() for idx in self.blocks]

    def factor(self, barrier_diag: np.ndarray):
        inv_diag = np.zeros(self.n)
        s = self.singletons
        inv_diag[s] = 1.0 / (self.p_diag[s] + barrier_diag[s])
        block_factors = []
        for idx, pb in zip(self.blocks, self.p_blocks):
            h = pb + np.diag(barrier_diag[idx])
            try:
                block_factors.append(scipy.linalg.cho_factor(h, check_finite=False))
            except scipy.linalg.LinAlgError as exc:
                raise NumericalBreakdown(f"barrier Hessian block not PD: {exc}") from exc

        def apply(v: np.ndarray) -> np.ndarray:
            out = inv_diag * v
            for idx, cf in zip(self.blocks, block_factors):
                out[idx] = scipy.linalg.cho_solve(cf, v[idx], check_finite=False)
            return out

        def as_matrix() -> sp.csc_matrix:
            rows = []
            cols = []
            vals = []
            if s.any():
                rows.append(np.nonzero(s)[0])
                cols.append(np.nonzero(s)[0])
                vals.append(inv_diag[s])
            for idx, cf in zip(self.blocks, block_factors):
                inv = scipy.linalg.cho_solve(cf, np.eye(len(idx)), check_finite=False)
                grid_r, grid_c = np.meshgrid(idx, idx, indexing="ij")
                rows.append(grid_r.ravel())
                cols.append(grid_c.ravel())
                vals.append(inv.ravel())
            return sp.csc_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.n, self.n))

        return apply, as_matrix


def _extended_system(qp: QuadraticProgram):
    """Slack columns for inequality rows, then nonnegative splitting of
    fully free columns.  Returns the equality-form data and the map back
    to structural variables."""
    m, n = qp.n_rows, qp.n_cols
    ineq = np.nonzero(qp.senses != RowSense.EQ)[0]
    k = len(ineq)
    a_csc = sp.csc_matrix(qp.a_matrix)
    slack_cols = sp.csc_matrix((np.ones(k), (ineq, np.arange(k))), shape=(m, k))
    a_ext = sp.hstack([a_csc, slack_cols], format="csc")
    slack_lo = np.where(qp.senses[ineq] == RowSense.GE, -np.inf, 0.0)
    slack_hi = np.where(qp.senses[ineq] == RowSense.LE, np.inf, 0.0)
    lb = np.concatenate([qp.lower, slack_lo])
    ub = np.concatenate([qp.upper, slack_hi])
    q_lin = np.concatenate([-qp.objective, np.zeros(k)])
    p_min = sp.block_diag(
        [sp.csc_matrix(-qp.quadratic), sp.csc_matrix((k, k))], format="csc")

    free = np.nonzero(~np.isfinite(lb) & ~np.isfinite(ub))[0]
    n_ext = n + k
    total = n_ext + len(free)
    # x_original = E x_split ; E = [I | -I on free columns]
    e_rows = np.concatenate([np.arange(n_ext), free])
    e_cols = np.arange(total)
    e_vals = np.concatenate([np.ones(n_ext), -np.ones(len(free))])
    e_map = sp.csc_matrix((e_vals, (e_rows, e_cols)), shape=(n_ext, total))
    a_split = (a_ext @ e_map).tocsc()
    p_split = (e_map.T @ p_min @ e_map).tocsc()
    q_split = e_map.T @ q_lin
    lb_split = np.concatenate([lb, np.zeros(len(free))])
    lb_split[free] = 0.0
    ub_split = np.concatenate([ub, np.full(len(free), np.inf)])
    ub_split[free] = np.inf
    return a_split, p_split, q_split, lb_split, ub_split, e_map, n


def _certify_unbounded(qp: QuadraticProgram, options: SolverOptions):
    """Search the recession cone for an improving ray with ``Q ray = 0``.

    Returns the ray when the program is provably unbounded, else None.
    """
    n = qp.n_cols
    q_dense = qp.quadratic.toarray() if sp.issparse(qp.quadratic) else qp.quadratic
    a_dense = qp.a_matrix.toarray() if sp.issparse(qp.a_matrix) else qp.a_matrix
    rows = np.vstack([a_dense, q_dense, qp.objective.reshape(1, -1)])
    senses = np.concatenate([qp.senses, np.full(n, RowSense.EQ), [RowSense.LE]])
    rhs = np.concatenate([np.zeros(qp.n_rows), np.zeros(n), [1.0]])
    lower = np.where(np.isfinite(qp.lower), 0.0, -np.inf)
    upper = np.where(np.isfinite(qp.upper), 0.0, np.inf)
    cone = LinearProgram(
        objective=qp.objective.copy(),
        a_matrix=rows,
        senses=senses,
        rhs=rhs,
        lower=lower,
        upper=upper,
    )
    sol = solve_lp(cone, options)
    if sol.status == Status.OPTIMAL and sol.objective > 1e-7:
        return sol.x
    return None


def _solve_with_fixed(qp: QuadraticProgram, fixed: np.ndarray,
                      options: SolverOptions,
                      feasible_point: np.ndarray | None = None) -> LPSolution:
    """Substitute pinned columns out, solve the reduction, reassemble."""
    from .checks import solution_residuals

    keep = ~fixed
    x_fix = qp.lower[fixed]
    hint = None
    if feasible_point is not None:
        feasible_point = np.asarray(feasible_point, dtype=float)
        if feasible_point.shape == (qp.n_cols,):
            hint = feasible_point[keep]
    if sp.issparse(qp.a_matrix):
        a_csc = qp.a_matrix.tocsc()
        a_red = a_csc[:, keep]
        rhs_red = qp.rhs - np.asarray(a_csc[:, fixed] @ x_fix).ravel()
    else:
        a_red = qp.a_matrix[:, keep]
        rhs_red = qp.rhs - qp.a_matrix[:, fixed] @ x_fix
    if sp.issparse(qp.quadratic):
        q_csc = qp.quadratic.tocsc()
        q_red = q_csc[:, keep].tocsr()[keep, :]
        q_fix_cols = q_csc[:, fixed].tocsr()
        q_cross = np.asarray(q_fix_cols[keep, :] @ x_fix).ravel()
        q_ff = float(x_fix @ np.asarray(q_fix_cols[fixed, :] @ x_fix).ravel()) \
            if len(x_fix) else 0.0
    else:
        q_red = qp.quadratic[np.ix_(keep, keep)]
        q_cross = qp.quadratic[np.ix_(keep, fixed)] @ x_fix
        q_ff = float(x_fix @ (qp.quadratic[np.ix_(fixed, fixed)] @ x_fix))
    red = QuadraticProgram(
        objective=qp.objective[keep] + q_cross,
        quadratic=q_red,
        a_matrix=a_red,
        senses=qp.senses,
        rhs=rhs_red,
        lower=qp.lower[keep],
        upper=qp.upper[keep],
        offset=qp.offset + float(qp.objective[fixed] @ x_fix) + 0.5 * q_ff,
    )
    inner = solve_qp(red, options, feasible_point=hint)
    if inner.status != Status.OPTIMAL:
        return inner
    x = np.empty(qp.n_cols)
    x[keep] = inner.x
    x[fixed] = x_fix
    y = inner.duals
    grad = qp.objective + np.asarray(qp.quadratic @ x).ravel()
    d_pub = grad - np.asarray(qp.a_matrix.T @ y).ravel()
    sol = LPSolution(
        status=Status.OPTIMAL,
        x=x,
        duals=y,
        reduced_costs=d_pub,
        objective=qp.objective_value(x),
        iterations=inner.iterations,
    )
    sol.residuals = solution_residuals(qp.lp_view(), x, y, d_pub,
                                       quadratic=qp.quadratic)
    return sol


def _is_primal_feasible(qp: QuadraticProgram, x: np.ndarray) -> bool:
    """Tight feasibility screen used to bypass the phase-1 probe."""
    x = np.asarray(x, dtype=float)
    if x.shape != (qp.n_cols,) or not np.all(np.isfinite(x)):
        return False
    tol = 1e-7 * (1.0 + float(np.max(np.abs(qp.rhs), initial=0.0))
                  + float(np.max(np.abs(x), initial=0.0)))
    gap = np.asarray(qp.a_matrix @ x).ravel() - qp.rhs
    if np.any(gap[qp.senses == RowSense.LE] > tol):
        return False
    if np.any(gap[qp.senses == RowSense.GE] < -tol):
        return False
    if np.any(np.abs(gap[qp.senses == RowSense.EQ]) > tol):
        return False
    return bool(np.all(x >= qp.lower - tol) and np.all(x <= qp.upper + tol))


def solve_qp(qp: QuadraticProgram, options: SolverOptions | None = None,
             feasible_point: np.ndarray | None = None) -> LPSolution:
    """Solve a :class:`QuadraticProgram`; result mirrors :func:`solve_lp`.

    The returned duals and reduced costs follow the maximize conventions
    of the LP module, so a zero-Hessian program yields a solution directly
    comparable with the simplex answer.  A caller who already holds a
    feasible point may pass it to skip the phase-1 feasibility probe; the
    point is verified first, so a bad hint only costs the probe.
    """
    from .checks import solution_residuals

    options = options or SolverOptions()
    qp.validate()

    # feasibility (and its certificate) is delegated to simplex phase 1
    # unless the caller supplied a point that verifiably passes screening
    if feasible_point is None or not _is_primal_feasible(qp, feasible_point):
        probe = LinearProgram(np.zeros(qp.n_cols), qp.a_matrix, qp.senses,
                              qp.rhs, qp.lower, qp.upper)
        feas = solve_lp(probe, options)
        if feas.status == Status.INFEASIBLE:
            return LPSolution(status=Status.INFEASIBLE, farkas=feas.farkas)

    # pinned columns (lb == ub) would defeat the barrier; substitute them out
    fixed = (qp.upper - qp.lower) <= 0.0
    if np.any(fixed):
        return _solve_with_fixed(qp, fixed, options, feasible_point)

    a_eq, p_min, q_lin, lb, ub, e_map, n = _extended_system(qp)
    m = qp.n_rows
    total = a_eq.shape[1]
    b = qp.rhs
    a_csr = a_eq.tocsr()
    inverter = _BlockInverter(p_min)

    fin_lo = np.isfinite(lb)
    fin_hi = np.isfinite(ub)

    x = np.zeros(total)
    both = fin_lo & fin_hi
    x[both] = 0.5 * (lb[both] + ub[both])
    only_lo = fin_lo & ~fin_hi
    x[only_lo] = lb[only_lo] + 1.0
    only_hi = fin_hi & ~fin_lo
    x[only_hi] = ub[only_hi] - 1.0
    y = np.zeros(m)
    zl = np.where(fin_lo, 1.0, 0.0)
    zu = np.where(fin_hi, 1.0, 0.0)

    n_compl = int(fin_lo.sum() + fin_hi.sum())
    b_scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    g_scale = 1.0 + float(np.max(np.abs(q_lin), initial=0.0))
    p_scale = 1.0 + float(np.max(np.abs(p_min.data), initial=0.0)) \
        if p_min.nnz else 1.0
    tau = 0.995
    max_iter = 120
    delta_p = 1e-9 * p_scale
    delta_d = 1e-10

    def max_step(v, dv, mask):
        neg = mask & (dv < -1e-300)
        if not np.any(neg):
            return 1.0
        return min(1.0, float(np.min(-v[neg] / dv[neg])))

    # slacks are carried incrementally: recomputing ub - x after an
    # update can cancel to zero in floating point once they get small,
    # while the incremental form stays positive under the step clamp
    sl = np.where(fin_lo, x - lb, 1.0)
    su = np.where(fin_hi, ub - x, 1.0)
    status_unbounded = False
    for it in range(max_iter):
        if np.any(sl[fin_lo] <= 0) or np.any(su[fin_hi] <= 0):
            raise NumericalBreakdown("interior-point iterate left the box")
        px = np.asarray(p_min @ x).ravel()
        r_dual = px + q_lin - a_csr.T @ y - zl + zu
        r_prim = a_csr @ x - b
        mu = 0.0
        if n_compl:
            mu = (float(zl[fin_lo] @ sl[fin_lo]) + float(zu[fin_hi] @ su[fin_hi])) / n_compl
        obj_now = -(float(q_lin @ x) + 0.5 * float(x @ px))
        grad_scale = g_scale + float(np.max(np.abs(px), initial=0.0))
        ok_p = float(np.max(np.abs(r_prim), initial=0.0)) <= 0.1 * options.kkt_tol * b_scale
        ok_d = float(np.max(np.abs(r_dual), initial=0.0)) <= 0.1 * options.kkt_tol * grad_scale
        ok_c = n_compl == 0 or mu <= 0.1 * options.kkt_tol * (1.0 + abs(obj_now))
        if ok_p and ok_d and ok_c:
            break
        if float(np.max(np.abs(x))) > 1e9 * (b_scale + g_scale):
            status_unbounded = True
            break

        d_diag = np.where(fin_lo, zl / sl, 0.0) + np.where(fin_hi, zu / su, 0.0)
        attempt = 0
        while True:
            try:
                h_apply, h_matrix = inverter.factor(d_diag + delta_p)
                if m:
                    hinv_mat = h_matrix()
                    normal = (a_csr @ hinv_mat @ a_csr.T).toarray()
                    normal[np.arange(m), np.arange(m)] += delta_d
                    chol = scipy.linalg.cho_factor(normal, check_finite=False)
                break
            except (NumericalBreakdown, scipy.linalg.LinAlgError):
                attempt += 1
                if attempt > 3:
                    raise NumericalBreakdown("normal-equation factorization failed")
                delta_p *= 100.0
                delta_d *= 100.0

        def kkt_solve(r1, r2):
            if not m:
                return h_apply(r1), np.zeros(0)
            rhs = a_csr @ h_apply(r1) - r2
            v = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
            dx = h_apply(r1 - a_csr.T @ v)
            return dx, v

        # affine predictor
        cl_aff = np.where(fin_lo, -sl * zl, 0.0)
        cu_aff = np.where(fin_hi, -su * zu, 0.0)
        r1 = -r_dual + np.where(fin_lo, cl_aff / sl, 0.0) - np.where(fin_hi, cu_aff / su, 0.0)
        dx_a, v_a = kkt_solve(r1, -r_prim)
        dy_a = -v_a
        dzl_a = np.where(fin_lo, (cl_aff - zl * dx_a) / sl, 0.0)
        dzu_a = np.where(fin_hi, (cu_aff + zu * dx_a) / su, 0.0)

        ap = min(max_step(sl, dx_a, fin_lo), max_step(su, -dx_a, fin_hi))
        ad = min(max_step(zl, dzl_a, fin_lo), max_step(zu, dzu_a, fin_hi))
        if n_compl:
            mu_aff = (
                float(np.maximum(zl + ad * dzl_a, 0)[fin_lo]
                      @ np.maximum(sl + ap * dx_a, 0)[fin_lo])
                + float(np.maximum(zu + ad * dzu_a, 0)[fin_hi]
                        @ np.maximum(su - ap * dx_a, 0)[fin_hi])
            ) / n_compl
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            sigma = min(max(sigma, 0.0), 1.0)
        else:
            sigma = 0.0

        # corrector with centering
        cl = np.where(fin_lo, sigma * mu - sl * zl - dx_a * dzl_a, 0.0)
        cu = np.where(fin_hi, sigma * mu - su * zu + dx_a * dzu_a, 0.0)
        r1 = -r_dual + np.where(fin_lo, cl / sl, 0.0) - np.where(fin_hi, cu / su, 0.0)
        dx, v = kkt_solve(r1, -r_prim)
        dy = -v
        dzl = np.where(fin_lo, (cl - zl * dx) / sl, 0.0)
        dzu = np.where(fin_hi, (cu + zu * dx) / su, 0.0)

        ap = min(tau * min(max_step(sl, dx, fin_lo), max_step(su, -dx, fin_hi)), 1.0)
        ad = min(tau * min(max_step(zl, dzl, fin_lo), max_step(zu, dzu, fin_hi)), 1.0)
        x = x + ap * dx
        sl = np.where(fin_lo, sl + ap * dx, 1.0)
        su = np.where(fin_hi, su - ap * dx, 1.0)
        y = y + ad * dy
        zl = zl + ad * dzl
        zu = zu + ad * dzu
    else:
        ray = _certify_unbounded(qp, options)
        if ray is not None:
            return LPSolution(status=Status.UNBOUNDED, ray=ray)
        raise NumericalBreakdown(
            f"interior-point method did not converge in {max_iter} iterations")

    if status_unbounded:
        ray = _certify_unbounded(qp, options)
        if ray is not None:
            return LPSolution(status=Status.UNBOUNDED, ray=ray)
        raise NumericalBreakdown("interior-point iterates diverged")

    x_struct = np.asarray(e_map @ x).ravel()[: qp.n_cols]
    y_pub = -y
    grad = qp.objective + np.asarray(qp.quadratic @ x_struct).ravel()
    d_pub = grad - np.asarray(qp.a_matrix.T @ y_pub).ravel()
    sol = LPSolution(
        status=Status.OPTIMAL,
        x=x_struct,
        duals=y_pub,
        reduced_costs=d_pub,
        objective=qp.objective_value(x_struct),
        iterations=it + 1,
    )
    sol.residuals = solution_residuals(qp.lp_view(), x_struct, y_pub, d_pub,
                                       quadratic=qp.quadratic)
    return sol
