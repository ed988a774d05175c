"""Linear programming with a two-phase revised simplex method.

Problems are stated in maximize form over bounded variables:

    maximize    c' x
    subject to  A x  {<=, =, >=}  b        (row senses)
                lb <= x <= ub              (entries may be infinite)

The solver works on the slack-extended system ``[A I] [x; s] = b`` with
sense-derived slack bounds, keeps a dense LU factorization of the basis,
and applies product-form eta updates between refactorizations.  Phase 1
introduces signed artificial columns only for rows whose slack cannot
absorb the initial residual.  Dantzig pricing switches to Bland's rule
after the configured number of degenerate pivots, which guarantees
termination.

Certificates: infeasibility returns the phase-1 dual ray, unboundedness
returns an improving feasible ray; both are verified numerically before
the result is returned.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..errors import NumericalBreakdown

#: Structural-variable count above which constraint storage switches to CSR.
DENSE_LIMIT = 5000


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class RowSense:
    LE = "<"
    EQ = "="
    GE = ">"


@dataclass
class SolverOptions:
    """Tolerances and limits shared by the LP and QP solvers."""

    feas_tol: float = 1e-7
    gap_tol: float = 1e-6
    pivot_tol: float = 1e-12
    #: interior-point KKT residual target
    kkt_tol: float = 1e-7
    #: reduced-cost threshold scale for entering candidates
    dual_tol: float = 1e-8
    #: refactorize the basis after this many eta updates
    refactor_every: int = 64
    #: iteration cap; None picks 10000 + 10 * (rows + cols)
    max_iter: int | None = None


@dataclass
class LinearProgram:
    """Maximize ``objective' x`` subject to rows and variable bounds."""

    objective: np.ndarray
    a_matrix: object          # dense ndarray or scipy sparse, rows x cols
    senses: np.ndarray        # one of "<", "=", ">" per row
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
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

    def validate(self) -> None:
        m, n = self.a_matrix.shape
        if self.objective.shape != (n,):
            raise ValueError("objective length does not match column count")
        if self.senses.shape != (m,) or self.rhs.shape != (m,):
            raise ValueError("row data length does not match row count")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bound length does not match column count")
        if not set(self.senses) <= {RowSense.LE, RowSense.EQ, RowSense.GE}:
            raise ValueError("row senses must be one of '<', '=', '>'")
        dense = self.a_matrix.toarray() if sp.issparse(self.a_matrix) else self.a_matrix
        if not np.all(np.isfinite(dense)):
            raise ValueError("constraint entries must be finite")
        if not np.all(np.isfinite(self.rhs)) or not np.all(np.isfinite(self.objective)):
            raise ValueError("objective and rhs entries must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("bounds must not be NaN")


@dataclass
class Residuals:
    """Worst-case violations measured on a returned solution."""

    primal: float = 0.0
    dual: float = 0.0
    complementarity: float = 0.0
    gap: float = 0.0


@dataclass
class LPSolution:
    status: Status
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float | None = None
    residuals: Residuals = field(default_factory=Residuals)
    #: dual ray proving infeasibility (rows space)
    farkas: np.ndarray | None = None
    #: feasible improving ray proving unboundedness (column space)
    ray: np.ndarray | None = None
    #: opaque warm-start token (basis, variable statuses)
    basis: tuple | None = None
    iterations: int = 0


# nonbasic/basic variable states
_BASIC, _AT_LOWER, _AT_UPPER, _FREE = 0, 1, 2, 3


class _Workspace:
    """Slack-extended problem data plus the factored basis."""

    def __init__(self, lp: LinearProgram, options: SolverOptions):
        self.opt = options
        m, n = lp.a_matrix.shape
        self.m, self.n = m, n
        self.sparse = sp.issparse(lp.a_matrix) or n > DENSE_LIMIT
        if self.sparse:
            a = sp.csr_matrix(lp.a_matrix, dtype=float)
            self.a_csr = a
            self.a_csc = a.tocsc()
        else:
            self.a_dense = np.asarray(lp.a_matrix, dtype=float)
        self.b = lp.rhs.copy()
        # slack bounds encode the row senses
        slack_lo = np.where(lp.senses == RowSense.GE, -np.inf, 0.0)
        slack_hi = np.where(lp.senses == RowSense.LE, np.inf, 0.0)
        self.lb = np.concatenate([lp.lower, slack_lo])
        self.ub = np.concatenate([lp.upper, slack_hi])
        self.art_rows: list[int] = []
        self.art_signs: list[float] = []
        self.basis = np.empty(m, dtype=int)
        self.vstatus = np.empty(n + m, dtype=np.int8)
        self.x = np.zeros(n + m)
        self._factor = None
        self._etas: list[tuple[int, np.ndarray]] = []

    # -- column access -------------------------------------------------
    def n_total(self) -> int:
        return self.n + self.m + len(self.art_rows)

    def col(self, j: int) -> np.ndarray:
        if j < self.n:
            if self.sparse:
                return self.a_csc[:, j].toarray().ravel()
            return self.a_dense[:, j]
        v = np.zeros(self.m)
        if j < self.n + self.m:
            v[j - self.n] = 1.0
        else:
            k = j - self.n - self.m
            v[self.art_rows[k]] = self.art_signs[k]
        return v

    def mat_t_vec(self, y: np.ndarray) -> np.ndarray:
        """W' y across structural, slack and artificial columns."""
        ay = self.a_csr.T @ y if self.sparse else self.a_dense.T @ y
        parts = [ay, y]
        if self.art_rows:
            parts.append(np.asarray(self.art_signs) * y[self.art_rows])
        return np.concatenate(parts)

    # -- basis factorization -------------------------------------------
    def refactor(self) -> None:
        cols = [self.col(j) for j in self.basis]
        bmat = np.column_stack(cols) if cols else np.zeros((0, 0))
        try:
            self._factor = scipy.linalg.lu_factor(bmat, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NumericalBreakdown(f"basis factorization failed: {exc}") from exc
        if not np.all(np.isfinite(self._factor[0])):
            raise NumericalBreakdown("basis factorization produced non-finite entries")
        self._etas = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = scipy.linalg.lu_solve(self._factor, v, check_finite=False)
        for r, w in self._etas:
            xr = x[r] / w[r]
            x -= w * xr
            x[r] = xr
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        y = v.astype(float, copy=True)
        for r, w in reversed(self._etas):
            y[r] = (y[r] - (w @ y - w[r] * y[r])) / w[r]
        return scipy.linalg.lu_solve(self._factor, y, trans=1, check_finite=False)

    def push_eta(self, r: int, w: np.ndarray) -> None:
        self._etas.append((r, w.copy()))

    def needs_refactor(self) -> bool:
        return len(self._etas) >= self.opt.refactor_every

    # -- values --------------------------------------------------------
    def nonbasic_contribution(self) -> np.ndarray:
        """W_N x_N over current nonbasic values."""
        total = np.zeros(self.m)
        xs = self.x[: self.n]
        nz = np.nonzero((self.vstatus[: self.n] != _BASIC) & (xs != 0.0))[0]
        if len(nz):
            if self.sparse:
                total += self.a_csc[:, nz] @ xs[nz]
            else:
                total += self.a_dense[:, nz] @ xs[nz]
        for j in range(self.n, self.n_total()):
            if self.vstatus[j] != _BASIC and self.x[j] != 0.0:
                total += self.col(j) * self.x[j]
        return total

    def recompute_basics(self) -> None:
        rhs = self.b - self.nonbasic_contribution()
        self.x[self.basis] = self.ftran(rhs)


def _initial_point(ws: _Workspace) -> None:
    """Nonbasic start at finite bounds, slack-or-artificial basis."""
    n, m = ws.n, ws.m
    for j in range(n):
        lo, hi = ws.lb[j], ws.ub[j]
        if np.isfinite(lo):
            ws.vstatus[j] = _AT_LOWER
            ws.x[j] = lo
        elif np.isfinite(hi):
            ws.vstatus[j] = _AT_UPPER
            ws.x[j] = hi
        else:
            ws.vstatus[j] = _FREE
            ws.x[j] = 0.0
    if ws.sparse:
        r = ws.b - ws.a_csr @ ws.x[:n]
    else:
        r = ws.b - ws.a_dense @ ws.x[:n]
    snap = 1e-11 * (1.0 + float(np.max(np.abs(ws.b))) if m else 1.0)
    for i in range(m):
        j = n + i
        lo, hi = ws.lb[j], ws.ub[j]
        v = r[i]
        if lo - snap <= v <= hi + snap:
            ws.basis[i] = j
            ws.vstatus[j] = _BASIC
            ws.x[j] = min(max(v, lo), hi)
        else:
            near = lo if v < lo else hi
            ws.vstatus[j] = _AT_LOWER if near == lo else _AT_UPPER
            ws.x[j] = near
            resid = v - near
            ws.art_rows.append(i)
            ws.art_signs.append(1.0 if resid > 0 else -1.0)
            k = ws.n_total() - 1
            ws.basis[i] = k
    # artificial columns extend the status/value arrays
    extra = len(ws.art_rows)
    if extra:
        ws.vstatus = np.concatenate([ws.vstatus, np.full(extra, _BASIC, dtype=np.int8)])
        ws.x = np.concatenate([ws.x, np.zeros(extra)])
        ws.lb = np.concatenate([ws.lb, np.zeros(extra)])
        ws.ub = np.concatenate([ws.ub, np.full(extra, np.inf)])
    ws.refactor()
    ws.recompute_basics()


def _simplex_loop(ws: _Workspace, c_ext: np.ndarray, bland_start: bool = False):
    """Run primal simplex until optimal for ``c_ext``.

    Returns ``(status, degenerate_pivots, iterations)`` where status is
    "optimal" or "unbounded"; an unbounded result also stores the
    offending column/direction on the workspace.
    """
    opt = ws.opt
    m = ws.m
    max_iter = opt.max_iter or (10000 + 10 * (ws.m + ws.n))
    bland_after = 5 * (ws.m + ws.n)
    degen = 0
    bland = bland_start
    it = 0
    c_scale = 1.0 + float(np.max(np.abs(c_ext))) if len(c_ext) else 1.0
    d_tol = opt.dual_tol * c_scale
    fixed = ws.lb == ws.ub
    while True:
        if it >= max_iter:
            raise NumericalBreakdown(
                f"simplex iteration cap {max_iter} reached (possible cycling)"
            )
        it += 1
        if ws.needs_refactor():
            ws.refactor()
            ws.recompute_basics()
        y = ws.btran(c_ext[ws.basis])
        d = c_ext - ws.mat_t_vec(y)
        status = ws.vstatus
        can_up = (status == _AT_LOWER) & (d > d_tol)
        can_dn = (status == _AT_UPPER) & (d < -d_tol)
        free_mv = (status == _FREE) & (np.abs(d) > d_tol)
        cand = (can_up | can_dn | free_mv) & ~fixed
        idx = np.nonzero(cand)[0]
        if len(idx) == 0:
            return "optimal", degen, it
        if bland:
            q = int(idx[0])
        else:
            q = int(idx[np.argmax(np.abs(d[idx]))])
        s = 1.0 if (status[q] == _AT_LOWER or (status[q] == _FREE and d[q] > 0)) else -1.0
        w = ws.ftran(ws.col(q))
        # ratio test: basics move by -s*t*w, entering by +s*t
        xb = ws.x[ws.basis]
        lo_b, hi_b = ws.lb[ws.basis], ws.ub[ws.basis]
        sw = s * w
        guard = 1e-9
        t_block = np.full(m, np.inf)
        dec = sw > guard
        inc = sw < -guard
        with np.errstate(invalid="ignore"):
            t_block[dec] = (xb[dec] - lo_b[dec]) / sw[dec]
            t_block[inc] = (xb[inc] - hi_b[inc]) / sw[inc]
        t_block[t_block < 0.0] = 0.0      # degenerate: already at the bound
        span = ws.ub[q] - ws.lb[q]
        t_flip = span if np.isfinite(span) else np.inf
        t_min_block = float(np.min(t_block)) if m else np.inf
        t = min(t_flip, t_min_block)
        if not np.isfinite(t):
            ws.unbounded_col = q
            ws.unbounded_dir = s
            ws.unbounded_w = w
            return "unbounded", degen, it
        if t_flip <= t_min_block:
            # bound flip, no basis change
            ws.x[ws.basis] = xb - sw * t
            ws.x[q] = ws.ub[q] if s > 0 else ws.lb[q]
            ws.vstatus[q] = _AT_UPPER if s > 0 else _AT_LOWER
            continue
        ties = np.nonzero(t_block <= t + 1e-12 * (1.0 + t))[0]
        if bland:
            r = int(ties[np.argmin(ws.basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(w[ties]))])
        if abs(w[r]) <= opt.pivot_tol * (1.0 + float(np.max(np.abs(w)))):
            ws.refactor()
            ws.recompute_basics()
            continue
        t = float(t_block[r])
        if t <= 1e-9:
            degen += 1
            if degen >= bland_after:
                bland = True
        leave = int(ws.basis[r])
        ws.x[ws.basis] = xb - sw * t
        ws.x[q] = ws.x[q] + s * t
        hit_lower = sw[r] > 0
        ws.x[leave] = ws.lb[leave] if hit_lower else ws.ub[leave]
        ws.vstatus[leave] = _AT_LOWER if hit_lower else _AT_UPPER
        ws.vstatus[q] = _BASIC
        ws.basis[r] = q
        ws.push_eta(r, w)


def _extract(ws: _Workspace, lp: LinearProgram, c_ext, it) -> LPSolution:
    ws.refactor()
    ws.recompute_basics()
    y = ws.btran(c_ext[ws.basis])
    d = c_ext - ws.mat_t_vec(y)
    x = ws.x[: ws.n].copy()
    sol = LPSolution(
        status=Status.OPTIMAL,
        x=x,
        duals=y,
        reduced_costs=d[: ws.n].copy(),
        objective=float(lp.objective @ x),
        basis=(ws.basis.copy(), ws.vstatus[: ws.n + ws.m].copy()),
        iterations=it,
    )
    return sol


def _unbounded_ray(ws: _Workspace) -> np.ndarray:
    """Improving feasible ray over structural variables."""
    ray = np.zeros(ws.n)
    q, s, w = ws.unbounded_col, ws.unbounded_dir, ws.unbounded_w
    if q < ws.n:
        ray[q] = s
    for pos, j in enumerate(ws.basis):
        if j < ws.n and abs(w[pos]) > 1e-12:
            ray[j] = -s * w[pos]
    return ray


def _farkas_ray(ws: _Workspace, y: np.ndarray) -> np.ndarray:
    return y.copy()


def _solve_bounds_only(lp: LinearProgram, options: SolverOptions) -> LPSolution:
    """A program with no constraint rows separates by coordinate."""
    from .checks import solution_residuals

    c = lp.objective
    n = lp.n_cols
    x = np.zeros(n)
    for j in range(n):
        if c[j] > 0:
            if not np.isfinite(lp.upper[j]):
                ray = np.zeros(n)
                ray[j] = 1.0
                return LPSolution(status=Status.UNBOUNDED, ray=ray)
            x[j] = lp.upper[j]
        elif c[j] < 0:
            if not np.isfinite(lp.lower[j]):
                ray = np.zeros(n)
                ray[j] = -1.0
                return LPSolution(status=Status.UNBOUNDED, ray=ray)
            x[j] = lp.lower[j]
        else:
            if np.isfinite(lp.lower[j]):
                x[j] = lp.lower[j]
            elif np.isfinite(lp.upper[j]):
                x[j] = lp.upper[j]
    sol = LPSolution(
        status=Status.OPTIMAL,
        x=x,
        duals=np.zeros(0),
        reduced_costs=c.copy(),
        objective=float(c @ x),
        iterations=0,
    )
    sol.residuals = solution_residuals(lp, x, sol.duals, sol.reduced_costs)
    return sol


def solve_lp(
    lp: LinearProgram,
    options: SolverOptions | None = None,
    warm_start: tuple | None = None,
) -> LPSolution:
    """Solve a :class:`LinearProgram` with the revised simplex method.

    ``warm_start`` accepts the ``basis`` token of a previous solution to
    the same constraint system (the objective may differ).  Certificates
    for infeasible and unbounded outcomes are numerically verified before
    being returned; failures raise :class:`NumericalBreakdown`.
    """
    from .checks import certify_lp_solution, farkas_gap, ray_violation

    options = options or SolverOptions()
    lp.validate()
    if lp.n_rows == 0:
        return _solve_bounds_only(lp, options)
    ws = _Workspace(lp, options)
    n, m = ws.n, ws.m

    warm_ok = False
    if warm_start is not None:
        basis, vstatus = warm_start
        if len(basis) == m and len(vstatus) == n + m and len(set(basis)) == m:
            ws.basis = np.asarray(basis, dtype=int).copy()
            ws.vstatus = np.asarray(vstatus, dtype=np.int8).copy()
            ws.x = np.zeros(n + m)
            at_lo = ws.vstatus == _AT_LOWER
            at_hi = ws.vstatus == _AT_UPPER
            ws.x[at_lo] = ws.lb[at_lo]
            ws.x[at_hi] = ws.ub[at_hi]
            try:
                ws.refactor()
                ws.recompute_basics()
                xb = ws.x[ws.basis]
                feas = np.all(xb >= ws.lb[ws.basis] - options.feas_tol * 10) and np.all(
                    xb <= ws.ub[ws.basis] + options.feas_tol * 10
                )
                warm_ok = bool(feas)
            except NumericalBreakdown:
                warm_ok = False
    if not warm_ok:
        ws = _Workspace(lp, options)
        _initial_point(ws)

    total_iters = 0
    # phase 1 only when artificials were needed
    if ws.art_rows:
        c1 = np.zeros(ws.n_total())
        c1[ws.n + ws.m:] = -1.0
        outcome, _, it1 = _simplex_loop(ws, c1)
        total_iters += it1
        if outcome == "unbounded":
            raise NumericalBreakdown("phase 1 reported unbounded; objective is bounded")
        art_sum = float(np.sum(ws.x[ws.n + ws.m:]))
        scale = 1.0 + float(np.max(np.abs(lp.rhs))) if m else 1.0
        if art_sum > 10 * options.feas_tol * scale:
            y = ws.btran(c1[ws.basis])
            farkas = _farkas_ray(ws, y)
            gap = farkas_gap(lp, farkas)
            if gap > -options.feas_tol:
                raise NumericalBreakdown(
                    f"infeasibility certificate failed verification (gap {gap:.3e})"
                )
            return LPSolution(status=Status.INFEASIBLE, farkas=farkas,
                              iterations=total_iters)
        # lock artificials at zero for phase 2
        nt = ws.n_total()
        ws.ub[ws.n + ws.m: nt] = 0.0
        ws.x[ws.n + ws.m: nt] = np.minimum(ws.x[ws.n + ws.m: nt], 0.0)

    c2 = np.zeros(ws.n_total())
    c2[:n] = lp.objective
    outcome, _, it2 = _simplex_loop(ws, c2)
    total_iters += it2
    if outcome == "unbounded":
        ray = _unbounded_ray(ws)
        viol = ray_violation(lp, ray)
        if viol > options.feas_tol:
            raise NumericalBreakdown(
                f"unboundedness certificate failed verification ({viol:.3e})"
            )
        return LPSolution(status=Status.UNBOUNDED, ray=ray, iterations=total_iters)

    sol = _extract(ws, lp, c2, total_iters)
    certify_lp_solution(lp, sol, options)
    return sol
