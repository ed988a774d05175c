"""Network-charge price selection over a finite grid of candidate levels.

The grid operator announces one price; prosumers respond by solving the
market LP of :mod:`gridcharge.market`.  Each candidate level is scored
in two steps.  First the market LP fixes the prosumers' optimal value.
Second, when the LP optimum is not a single point, a concave quadratic
tie-break program picks the operator-favoring response on the optimal
face: maximize charge revenue minus the transmission-loss cost subject
to the market constraints, the optimal-value pin, per-bus injection
coupling, and line flow limits.  A level whose every optimal response
violates a line limit is excluded.  The equilibrium price is the
feasible level with maximal grid profit; ties go to the smaller price.

The KKT machinery in this module turns "prosumers respond optimally"
into checkable algebra: stationarity rows, dual sign restrictions, and
the strong-duality identity.  A primal-dual pair that passes all of
them within tolerance certifies that the market response really is
optimal, which is what justifies scoring levels on the optimal face
instead of solving a nested optimization.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import (
    AllLevelsInfeasible,
    IncompleteIndexMap,
    InfiniteCap,
    NumericalBreakdown,
    SingularMatrix,
)
from .market import (
    LowerLevelProgram,
    MarketMetrics,
    MarketResponse,
    build_lower_lp,
    market_metrics,
    reprice,
    response_from_point,
)
from .network import FlowState
from .numerics import (
    LinearProgram,
    LPSolution,
    QuadraticProgram,
    RowSense,
    SolverOptions,
    Status,
    solve_lp,
    solve_qp,
)
from .numerics.lp import _BASIC as _BASIC_STATE


@dataclass(frozen=True)
class PriceGrid:
    """Evenly spaced candidate prices for the network charge."""

    gamma_min: float = 0.0
    gamma_max: float = 1.0
    n_levels: int = 51

    def __post_init__(self):
        if self.gamma_min < 0:
            raise ValueError("prices must be nonnegative")
        if self.gamma_max < self.gamma_min:
            raise ValueError("price range is empty")
        if self.n_levels < 1:
            raise ValueError("need at least one price level")
        if self.n_levels == 1 and self.gamma_max != self.gamma_min:
            raise ValueError("a single level requires gamma_min == gamma_max")

    @property
    def levels(self) -> np.ndarray:
        return np.linspace(self.gamma_min, self.gamma_max, self.n_levels)

    @property
    def spacing(self) -> float:
        if self.n_levels == 1:
            return 0.0
        return (self.gamma_max - self.gamma_min) / (self.n_levels - 1)

    @classmethod
    def from_spacing(cls, gamma_min: float, gamma_max: float,
                     dgamma: float) -> "PriceGrid":
        """Grid with a prescribed step; the step must tile the range."""
        if dgamma <= 0:
            raise ValueError("price step must be positive")
        count = int(round((gamma_max - gamma_min) / dgamma))
        if abs(gamma_min + count * dgamma - gamma_max) > 1e-9 * (1.0 + abs(gamma_max)):
            raise ValueError("price step does not evenly divide the range")
        return cls(gamma_min, gamma_max, count + 1)


# ---------------------------------------------------------------------------
# optimality certificates
# ---------------------------------------------------------------------------

@dataclass
class KktResiduals:
    """Scaled worst-case violations of each optimality condition."""

    stationarity: float
    primal: float
    dual_sign: float
    complementarity: float
    strong_duality: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal, self.dual_sign,
                   self.complementarity, self.strong_duality)


class KktSystem:
    """First-order optimality conditions of a market program.

    Dual variables are named after what they price: row symbols for row
    duals, ``("lower", column symbol)`` and ``("upper", column symbol)``
    for bound multipliers.  With the sign convention used here every
    multiplier of an active restriction is nonnegative, and each primal
    variable ``x_j`` with objective coefficient ``c_j`` satisfies

        -c_j + sum_i A[i, j] * y_i - zl_j + zu_j = 0.
    """

    def __init__(self, program: LowerLevelProgram):
        self.program = program
        self.lp = program.lp
        n, m = self.lp.n_cols, self.lp.n_rows
        self.col_symbols: list = [None] * n
        for symbol, j in program.columns.items():
            self.col_symbols[j] = symbol
        self.row_symbols: list = [None] * m
        for symbol, i in program.rows.items():
            self.row_symbols[i] = symbol
        self._a = np.asarray(self.lp.a_matrix, dtype=float)

    # -- structure -----------------------------------------------------
    def stationarity_row(self, symbol) -> dict:
        """One stationarity equation, as ``constant + sum(coef * dual) = 0``.

        Bound multipliers appear only for finite bounds; an infinite
        bound can never be active so its multiplier is identically zero.
        """
        j = self.program.columns[symbol]
        terms: dict = {}
        for i in np.flatnonzero(self._a[:, j]):
            terms[self.row_symbols[i]] = float(self._a[i, j])
        if np.isfinite(self.lp.lower[j]):
            terms[("lower", symbol)] = -1.0
        if np.isfinite(self.lp.upper[j]):
            terms[("upper", symbol)] = 1.0
        return {"constant": -float(self.lp.objective[j]), "terms": terms}

    def dual_symbols(self) -> list:
        """Every dual variable the system constrains."""
        out = list(self.row_symbols)
        for j, symbol in enumerate(self.col_symbols):
            if np.isfinite(self.lp.lower[j]):
                out.append(("lower", symbol))
            if np.isfinite(self.lp.upper[j]):
                out.append(("upper", symbol))
        return out

    # -- evaluation ----------------------------------------------------
    def point_from_solution(self, solution: LPSolution):
        """Split a solved LP into ``(x, y, zl, zu)`` for certification.

        The reduced cost of a column is the difference of its two bound
        multipliers, so the nonnegative parts recover them.
        """
        d = np.asarray(solution.reduced_costs, dtype=float)
        return (np.asarray(solution.x, dtype=float),
                np.asarray(solution.duals, dtype=float),
                np.maximum(-d, 0.0), np.maximum(d, 0.0))

    def residuals(self, x, y, zl, zu, gamma: float | None = None) -> KktResiduals:
        """Certify a candidate primal-dual pair.

        Every component is scaled by the data magnitude so the usual
        1e-6 acceptance threshold means the same thing on toy and
        desk-sized instances.  ``gamma`` re-evaluates the certificate at
        a different price without rebuilding the program.
        """
        program = self.program
        if gamma is not None and gamma != program.gamma:
            program = reprice(program, gamma)
        lp = program.lp
        a = self._a
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        zl = np.asarray(zl, dtype=float)
        zu = np.asarray(zu, dtype=float)
        c = lp.objective
        ax = a @ x
        aty = a.T @ y

        stat = -c + aty - zl + zu
        stat_scale = 1.0 + _sup(c) + _sup(aty)
        r_stat = _sup(stat) / stat_scale

        le = lp.senses == RowSense.LE
        ge = lp.senses == RowSense.GE
        eq = lp.senses == RowSense.EQ
        row_gap = ax - lp.rhs
        primal = max(
            _sup(np.maximum(row_gap[le], 0.0)),
            _sup(np.maximum(-row_gap[ge], 0.0)),
            _sup(row_gap[eq]),
        )
        fin_lb = np.isfinite(lp.lower)
        fin_ub = np.isfinite(lp.upper)
        primal = max(primal,
                     _sup(np.maximum(lp.lower[fin_lb] - x[fin_lb], 0.0)),
                     _sup(np.maximum(x[fin_ub] - lp.upper[fin_ub], 0.0)))
        r_primal = primal / (1.0 + _sup(lp.rhs) + _sup(x))

        sign = max(
            _sup(np.maximum(-y[le], 0.0)),
            _sup(np.maximum(y[ge], 0.0)),
            _sup(np.maximum(-zl, 0.0)),
            _sup(np.maximum(-zu, 0.0)),
            _sup(zl[~fin_lb]),
            _sup(zu[~fin_ub]),
        )
        dual_scale = 1.0 + _sup(y) + _sup(zl) + _sup(zu)
        r_sign = sign / dual_scale

        comp = max(
            _sup(y[le] * row_gap[le]),
            _sup(y[ge] * row_gap[ge]),
            _sup(zl[fin_lb] * (x[fin_lb] - lp.lower[fin_lb])),
            _sup(zu[fin_ub] * (lp.upper[fin_ub] - x[fin_ub])),
        )
        r_comp = comp / ((1.0 + _sup(lp.rhs) + _sup(x)) * dual_scale)

        gap = _dual_objective(lp, y, zl, zu) - float(c @ x)
        r_duality = abs(gap) / (1.0 + abs(float(c @ x)))

        return KktResiduals(stationarity=r_stat, primal=r_primal,
                            dual_sign=r_sign, complementarity=r_comp,
                            strong_duality=r_duality)


def _sup(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def _dual_objective(lp, y, zl, zu) -> float:
    fin_lb = np.isfinite(lp.lower)
    fin_ub = np.isfinite(lp.upper)
    value = float(np.asarray(y) @ lp.rhs)
    value -= float(np.asarray(zl)[fin_lb] @ lp.lower[fin_lb])
    value += float(np.asarray(zu)[fin_ub] @ lp.upper[fin_ub])
    return value


def assemble_kkt(program: LowerLevelProgram) -> KktSystem:
    """Build the optimality-condition system of a market program."""
    try:
        program.check_maps()
    except ValueError as exc:
        raise IncompleteIndexMap(str(exc)) from exc
    return KktSystem(program)


def strong_duality_residual(program: LowerLevelProgram, x, y, zl, zu,
                            gamma: float | None = None) -> float:
    """Dual objective minus primal objective, signed.

    Zero (to rounding) certifies joint optimality of the pair; for a
    feasible-but-suboptimal primal with optimal duals the value equals
    the optimality gap.  ``gamma`` evaluates both objectives at a
    different price than the program was built with.
    """
    if gamma is not None and gamma != program.gamma:
        program = reprice(program, gamma)
    lp = program.lp
    return _dual_objective(lp, y, zl, zu) - float(lp.objective @ np.asarray(x))


def big_m_bound(fleet, graph, distances, grid: PriceGrid | None = None) -> float:
    """Safe constant dominating the distance-weighted trade volume.

    Every purchase is capped, so summing ``distance * cap`` over all
    channels and periods bounds the volume Z regardless of the price
    level; a 1% safety factor guards the bound in product
    linearizations.  The price grid never enters: Z is a primal
    quantity.
    """
    distances = np.asarray(distances, dtype=float)
    total = 0.0
    for buyer, seller, cap in graph.pairs:
        if not np.isfinite(cap):
            raise InfiniteCap(f"trade cap for ({buyer}, {seller}) is infinite")
        bus_b = fleet.prosumers[fleet.index_of(buyer)].bus
        bus_s = fleet.prosumers[fleet.index_of(seller)].bus
        total += distances[bus_b, bus_s] * cap
    return 1.01 * graph.horizon * total


# ---------------------------------------------------------------------------
# per-level evaluation
# ---------------------------------------------------------------------------

@dataclass
class LevelRecord:
    """Outcome of one candidate price level."""

    index: int
    gamma: float
    feasible: bool
    #: prosumers' optimal LP value at this price
    lp_value: float | None = None
    #: "unique" when the LP optimum was provably a single point,
    #: "face-qp" when the tie-break program chose among optima
    tie_break: str = ""
    reason: str = ""
    error: str = ""
    grid_profit: float | None = None
    network_charge_revenue: float | None = None
    transmission_loss_cost: float | None = None
    prosumer_profit: float | None = None
    total_utility: float | None = None
    social_profit: float | None = None
    z_volume: float | None = None
    total_transaction_kwh: float | None = None
    curtailment_kwh: float | None = None
    line_violations: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "level": self.index,
            "gamma": self.gamma,
            "feasible": self.feasible,
            "tie_break": self.tie_break,
            "reason": self.reason,
            "error": self.error,
            "lp_value": self.lp_value,
            "grid_profit": self.grid_profit,
            "network_charge_revenue": self.network_charge_revenue,
            "transmission_loss_cost": self.transmission_loss_cost,
            "prosumer_profit": self.prosumer_profit,
            "total_utility": self.total_utility,
            "social_profit": self.social_profit,
            "z_volume": self.z_volume,
            "total_transaction_kwh": self.total_transaction_kwh,
            "curtailment_kwh": self.curtailment_kwh,
            "line_violations": [list(v) for v in self.line_violations],
        }


def _provably_unique(lp, solution: LPSolution) -> bool:
    """Basis certificate that the LP optimum is a single point.

    Sufficient condition: every nonbasic column that is free to move
    has a strictly nonzero reduced cost, so leaving the vertex strictly
    lowers the objective.  A slack's reduced cost is minus its row
    dual.  Marginal cases fall through to the tie-break program, which
    is always correct, just slower.
    """
    if solution.basis is None:
        return False
    _basis, vstatus = solution.basis
    n, m = lp.n_cols, lp.n_rows
    vstatus = np.asarray(vstatus)
    tol = 1e-6 * (1.0 + _sup(lp.objective))
    movable = (vstatus[:n] != _BASIC_STATE) & (lp.lower != lp.upper)
    if np.any(movable & (np.abs(solution.reduced_costs) <= tol)):
        return False
    slack_nb = (vstatus[n:n + m] != _BASIC_STATE) & (lp.senses != RowSense.EQ)
    if np.any(slack_nb & (np.abs(solution.duals) <= tol)):
        return False
    return True


def _parsimonious_trades(program: LowerLevelProgram, x: np.ndarray) -> np.ndarray:
    """Minimal-gross-volume representative of a market response.

    Offsetting volumes shipped around a cycle change no injection, no
    charge, and no utility, so the quadratic tie-break cannot rank them
    against their removal and an interior solver parks mid-face.  Among
    those equivalents this picks the least gross trade: per period it
    keeps every prosumer's net position, the charge base, and the
    channel caps, and minimizes total shipped volume, which removes
    circulations exactly.  The result stays on the prosumers' optimal
    face because every pinned quantity is preserved.
    """
    pairs = program.graph.pairs
    if not pairs:
        return np.asarray(x, dtype=float)
    x = np.array(x, dtype=float)
    ids = [p.prosumer_id for p in program.fleet.prosumers]
    index_of = {pid: i for i, pid in enumerate(ids)}
    n_ch = len(pairs)
    net = np.zeros((len(ids), n_ch))
    for k, (buyer, seller, _cap) in enumerate(pairs):
        net[index_of[buyer], k] += 1.0
        net[index_of[seller], k] -= 1.0
    caps = np.array([cap for _b, _s, cap in pairs], dtype=float)
    charge = program.gamma * np.asarray(program.pair_distance, dtype=float)
    blocks = [net]
    if np.any(charge > 0.0):
        blocks.append(charge.reshape(1, -1))
    a = np.vstack(blocks)
    senses = np.full(a.shape[0], RowSense.EQ)
    for t in range(program.fleet.horizon):
        cols = np.array([program.columns[("trade", b, s, t)]
                         for b, s, _cap in pairs])
        t_now = x[cols]
        if float(np.sum(t_now)) <= 1e-12:
            continue
        lp = LinearProgram(objective=-np.ones(n_ch), a_matrix=a, senses=senses,
                           rhs=a @ t_now, lower=np.zeros(n_ch), upper=caps)
        sol = solve_lp(lp)
        if sol.status != Status.OPTIMAL:
            raise NumericalBreakdown("trade purification failed")
        x[cols] = sol.x
    return x


class _NetworkFace:
    """Network-coupled quadratic program pieces shared across levels.

    Bus injections are linear in the trades (a sale injects at the
    seller's bus, a purchase withdraws at the buyer's bus), so both the
    transmission-loss quadratic and the line flow limits are expressed
    directly over the market columns without auxiliary variables.  The
    quadratic is block diagonal per period with value minus twice the
    loss cost; each finite line limit adds two rows per period.
    """

    def __init__(self, network, base_program: LowerLevelProgram, rho: float):
        lp = base_program.lp
        fleet = base_program.fleet
        self.network = network
        self.rho = float(rho)
        self.n_lp = lp.n_cols
        t_len = fleet.horizon
        pairs = base_program.graph.pairs
        n_ch = len(pairs)

        bus_of = {p.prosumer_id: p.bus for p in fleet.prosumers}
        inj_map = np.zeros((network.n_buses, n_ch))
        cols = np.zeros((t_len, n_ch), dtype=int)
        for k, (buyer, seller, _cap) in enumerate(pairs):
            inj_map[bus_of[seller], k] += 1.0
            inj_map[bus_of[buyer], k] -= 1.0
            for t in range(t_len):
                cols[t, k] = base_program.columns[("trade", buyer, seller, t)]
        loss_block = inj_map.T @ network.x_matrix @ inj_map

        if n_ch and t_len:
            q_rows = np.repeat(cols, n_ch, axis=1).ravel()
            q_cols = np.tile(cols, (1, n_ch)).ravel()
            q_vals = np.tile(-2.0 * self.rho * loss_block.ravel(), t_len)
            quadratic = sp.coo_matrix(
                (q_vals, (q_rows, q_cols)),
                shape=(self.n_lp, self.n_lp)).tocsr()
            quadratic.eliminate_zeros()
        else:
            quadratic = sp.csr_matrix((self.n_lp, self.n_lp))
        self.quadratic = quadratic

        lim_rows: list[int] = []
        lim_cols: list[int] = []
        lim_vals: list[float] = []
        limit_rhs: list[float] = []
        for k, line in enumerate(network.lines):
            if not np.isfinite(line.limit):
                continue
            weights = network.ptdf_rows[k] @ inj_map
            support = np.flatnonzero(np.abs(weights) > 1e-13)
            for t in range(t_len):
                for sign in (1.0, -1.0):
                    r = len(limit_rhs)
                    for ch in support:
                        lim_rows.append(r)
                        lim_cols.append(int(cols[t, ch]))
                        lim_vals.append(sign * weights[ch])
                    limit_rhs.append(line.limit)
        parts = [sp.csr_matrix(lp.a_matrix)]
        if limit_rhs:
            parts.append(sp.coo_matrix(
                (lim_vals, (lim_rows, lim_cols)),
                shape=(len(limit_rhs), self.n_lp)).tocsr())
        self.a_static = sp.vstack(parts).tocsr() if len(parts) > 1 else parts[0]
        self.senses_static = np.concatenate([
            lp.senses,
            np.full(len(limit_rhs), RowSense.LE),
        ])
        self.rhs_static = np.concatenate([lp.rhs, np.asarray(limit_rhs)])
        self.lower = lp.lower
        self.upper = lp.upper

    def pinned_qp(self, program: LowerLevelProgram, value: float) -> QuadraticProgram:
        """Tie-break program: maximize revenue minus loss cost over the
        responses that keep the prosumers at their optimal value."""
        objective = np.zeros(self.n_lp)
        for k, (buyer, seller, _cap) in enumerate(program.graph.pairs):
            coef = program.gamma * program.pair_distance[k]
            for t in range(program.fleet.horizon):
                objective[program.columns[("trade", buyer, seller, t)]] = coef
        pin = sp.csr_matrix(program.lp.objective)
        return QuadraticProgram(
            objective=objective,
            quadratic=self.quadratic,
            a_matrix=sp.vstack([self.a_static, pin]).tocsr(),
            senses=np.concatenate([self.senses_static, [RowSense.EQ]]),
            rhs=np.concatenate([self.rhs_static, [value]]),
            lower=self.lower,
            upper=self.upper,
        )

    def welfare_qp(self, program: LowerLevelProgram) -> QuadraticProgram:
        """Maximize total utility minus loss cost over all market
        outcomes within line limits; no price involved."""
        return QuadraticProgram(
            objective=program.lp.objective.copy(),
            quadratic=self.quadratic,
            a_matrix=self.a_static,
            senses=self.senses_static,
            rhs=self.rhs_static,
            lower=self.lower,
            upper=self.upper,
        )

    def market_point(self, program: LowerLevelProgram,
                     qp_solution: LPSolution) -> LPSolution:
        """Project a QP solution back onto the market LP columns and
        replace its trades by their minimal-gross-volume equivalent."""
        x = _parsimonious_trades(program, qp_solution.x[:self.n_lp])
        return LPSolution(status=Status.OPTIMAL, x=x,
                          objective=float(program.lp.objective @ x))


class _LevelEngine:
    """Shared state for evaluating price levels deterministically.

    The level LPs share every constraint and differ only in their
    objective, so their solutions are computed once as a warm-started
    ladder: level 0 from scratch, each later level from the previous
    level's basis.  Workers inherit the finished ladder, which keeps
    serial and parallel sweeps bit-identical and leaves only the
    tie-break programs to run per level.
    """

    def __init__(self, scenario, grid: PriceGrid, rho: float, options=None,
                 backend=None):
        self.network = scenario.network
        self.grid = grid
        self.rho = float(rho)
        self.options = options
        self.backend = backend
        self.base = build_lower_lp(scenario.fleet, scenario.graph,
                                   self.network.distances,
                                   float(grid.levels[0]))
        self.face = _NetworkFace(self.network, self.base, self.rho)
        self.ladder: list = []
        warm = None
        for gamma in self.grid.levels:
            program = reprice(self.base, float(gamma))
            try:
                solution = self._lp(program.lp, warm_start=warm)
                if solution.status != Status.OPTIMAL:
                    raise NumericalBreakdown(
                        f"market program reported {solution.status.name}")
            except (NumericalBreakdown, SingularMatrix) as exc:
                self.ladder.append(exc)
                continue
            self.ladder.append(solution)
            warm = solution.basis

    def _lp(self, lp, warm_start=None):
        if self.backend is None:
            return solve_lp(lp, self.options, warm_start)
        return self.backend.solve_lp(lp, self.options, warm_start)

    def _qp(self, qp, feasible_point=None):
        # reported trade volumes inherit the interior-point complementarity
        # residue, and the sweep-level comparisons need them an order below
        # 1e-6; ask the internal backend for a much tighter target first and
        # fall back through looser ones on numerical trouble, which keeps
        # every level solvable and the fallback sequence deterministic
        if self.backend is not None:
            return self.backend.solve_qp(qp, self.options)
        base = self.options if self.options is not None else SolverOptions()
        last_exc = None
        for tol in (1e-10, 1e-8, base.kkt_tol):
            options = base if tol >= base.kkt_tol else replace(base, kkt_tol=tol)
            try:
                return solve_qp(qp, options, feasible_point=feasible_point)
            except (NumericalBreakdown, SingularMatrix) as exc:
                last_exc = exc
        raise last_exc

    def evaluate(self, index: int, strict: bool = False) -> LevelRecord:
        record, _payload = self._evaluate(index, strict, want_response=False)
        return record

    def evaluate_with_response(self, index: int):
        return self._evaluate(index, strict=True, want_response=True)

    def _evaluate(self, index: int, strict: bool, want_response: bool):
        gamma = float(self.grid.levels[index])
        record = LevelRecord(index=index, gamma=gamma, feasible=False)
        program = reprice(self.base, gamma)
        entry = self.ladder[index]
        try:
            if isinstance(entry, Exception):
                raise entry
            solution = entry
            record.lp_value = float(solution.objective)
            if _provably_unique(program.lp, solution):
                record.tie_break = "unique"
                response = response_from_point(program, solution)
                metrics = market_metrics(response, self.network, self.rho)
                self._fill(record, metrics)
                bad = self._hard_violations(metrics.line_violations)
                if bad:
                    record.reason = "the unique market response violates line limits"
                else:
                    record.feasible = True
            else:
                record.tie_break = "face-qp"
                qp = self.face.pinned_qp(program, record.lp_value)
                qp_solution = self._qp(qp, feasible_point=solution.x)
                if qp_solution.status == Status.INFEASIBLE:
                    record.reason = "line limits exclude every optimal market response"
                    return record, None
                if qp_solution.status != Status.OPTIMAL:
                    raise NumericalBreakdown(
                        f"tie-break program reported {qp_solution.status.name}")
                point = self.face.market_point(program, qp_solution)
                response = response_from_point(program, point)
                metrics = market_metrics(response, self.network, self.rho)
                self._fill(record, metrics)
                record.feasible = True
        except (NumericalBreakdown, SingularMatrix) as exc:
            if strict:
                raise
            record.reason = "solver failure"
            record.error = f"{type(exc).__name__}: {exc}"
            return record, None
        payload = (response, metrics) if want_response else None
        return record, payload

    def _hard_violations(self, violations) -> list:
        out = []
        for line_idx, t, excess in violations:
            limit = self.network.lines[line_idx].limit
            if excess > 1e-6 * (1.0 + limit):
                out.append((line_idx, t, excess))
        return out

    @staticmethod
    def _fill(record: LevelRecord, metrics: MarketMetrics) -> None:
        record.grid_profit = metrics.grid_profit
        record.network_charge_revenue = metrics.network_charge_revenue
        record.transmission_loss_cost = metrics.transmission_loss_cost
        record.prosumer_profit = metrics.prosumer_profit
        record.total_utility = metrics.total_utility
        record.social_profit = metrics.social_profit
        record.z_volume = metrics.z_volume
        record.total_transaction_kwh = metrics.total_transaction_kwh
        record.curtailment_kwh = metrics.curtailment_kwh
        record.line_violations = list(metrics.line_violations)


# worker state for fork-based pools; set immediately before the pool is
# created so children inherit the engine through the process image
_POOL_STATE = None


def _pool_evaluate(index: int) -> LevelRecord:
    engine, strict = _POOL_STATE
    return engine.evaluate(index, strict=strict)


def _run_levels(engine: _LevelEngine, strict: bool, workers: int) -> list:
    indices = list(range(engine.grid.n_levels))
    if workers is None or workers <= 1:
        return [engine.evaluate(i, strict=strict) for i in indices]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:
        return [engine.evaluate(i, strict=strict) for i in indices]
    global _POOL_STATE
    _POOL_STATE = (engine, strict)
    try:
        with ctx.Pool(processes=workers) as pool:
            return pool.map(_pool_evaluate, indices)
    finally:
        _POOL_STATE = None


def _select_level(records) -> LevelRecord | None:
    """Feasible record with maximal grid profit; first (smallest price)
    wins exact ties."""
    best = None
    for record in records:
        if not record.feasible:
            continue
        if best is None or record.grid_profit > best.grid_profit:
            best = record
    return best


def _threshold_prices(records):
    """Smallest price with nonnegative grid profit, and smallest price
    with zero trade volume, among feasible levels."""
    feasible = [r for r in records if r.feasible]
    if not feasible:
        return None, None
    profit_scale = 1.0 + max(abs(r.grid_profit) for r in feasible)
    volume_scale = 1.0 + max(r.z_volume for r in feasible)
    lower = next((r.gamma for r in feasible
                  if r.grid_profit >= -1e-9 * profit_scale), None)
    upper = next((r.gamma for r in feasible
                  if r.z_volume <= 1e-6 * volume_scale), None)
    return lower, upper


@dataclass
class SweepResult:
    """Per-level records of a price sweep plus threshold prices."""

    levels: list
    gamma_lower: float | None
    gamma_upper: float | None

    def __iter__(self):
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, key):
        return self.levels[key]

    @property
    def argmax_index(self) -> int | None:
        best = _select_level(self.levels)
        return None if best is None else best.index


@dataclass
class EquilibriumResult:
    """Selected price level with its market response and diagnostics."""

    gamma_star: float
    level_index: int
    levels: list
    response: MarketResponse
    flow: FlowState
    metrics: MarketMetrics
    gamma_lower: float | None
    gamma_upper: float | None


def sweep_prices(scenario, grid: PriceGrid, rho: float, options=None,
                 workers: int = 1, backend=None) -> SweepResult:
    """Evaluate every price level; solver failures are recorded on the
    affected level instead of aborting the sweep."""
    engine = _LevelEngine(scenario, grid, rho, options, backend)
    records = _run_levels(engine, strict=False, workers=workers)
    lower, upper = _threshold_prices(records)
    return SweepResult(levels=records, gamma_lower=lower, gamma_upper=upper)


def solve_equilibrium(scenario, grid: PriceGrid, rho: float, options=None,
                      workers: int = 1, backend=None) -> EquilibriumResult:
    """Best price level for the grid operator.

    Evaluates every level, keeps the feasible one with maximal grid
    profit (smaller price on ties), and re-derives its full market
    response and network flow.
    """
    engine = _LevelEngine(scenario, grid, rho, options, backend)
    records = _run_levels(engine, strict=True, workers=workers)
    best = _select_level(records)
    if best is None:
        raise AllLevelsInfeasible(
            "no price level admits a market response within line limits")
    _record, payload = engine.evaluate_with_response(best.index)
    response, metrics = payload
    lower, upper = _threshold_prices(records)
    return EquilibriumResult(
        gamma_star=best.gamma,
        level_index=best.index,
        levels=records,
        response=response,
        flow=metrics.flow,
        metrics=metrics,
        gamma_lower=lower,
        gamma_upper=upper,
    )


def social_optimum(scenario, rho: float, options=None,
                   backend=None) -> MarketMetrics:
    """Welfare-maximal market outcome within line limits.

    Solves a single concave program: maximize total utility minus the
    transmission-loss cost, with no network charge levied.  Zero trade
    is always available, so the program is feasible for every scenario.
    """
    program = build_lower_lp(scenario.fleet, scenario.graph,
                             scenario.network.distances, 0.0)
    face = _NetworkFace(scenario.network, program, rho)
    welfare = face.welfare_qp(program)
    if backend is None:
        qp_solution = solve_qp(welfare, options)
    else:
        qp_solution = backend.solve_qp(welfare, options)
    if qp_solution.status != Status.OPTIMAL:
        raise NumericalBreakdown(
            f"welfare program reported {qp_solution.status.name}")
    point = face.market_point(program, qp_solution)
    response = response_from_point(program, point)
    return market_metrics(response, scenario.network, rho, gamma=0.0)
