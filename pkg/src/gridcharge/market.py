"""Prosumer fleet model and the market-clearing linear program.

Prosumers maximize joint welfare: the sum of concave piecewise-linear
consumption utilities minus the network charge on peer-to-peer trades,
subject to power balance, battery dynamics, and trade caps.  The charge
on a trade is the price gamma times the electrical distance between the
buyers' and sellers' buses times the traded power.

Only directed purchase variables exist; the matching sale is the same
trade seen from the other side, so each traded kW is charged exactly
once and the network charge is a pure transfer between prosumers and
the grid operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MalformedUtility,
    MissingDistance,
    OutOfDomain,
)
from .numerics import LinearProgram, RowSense, Status, solve_lp


@dataclass(frozen=True)
class PwlUtility:
    """Concave piecewise-linear utility of consumed power.

    ``breakpoints`` has one more entry than ``slopes``; segment k covers
    ``[breakpoints[k], breakpoints[k+1]]`` with marginal value
    ``slopes[k]``.  ``alpha`` is the utility at the first breakpoint.
    """

    alpha: float
    breakpoints: tuple
    slopes: tuple

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        if len(self.breakpoints) != len(self.slopes) + 1 or not self.slopes:
            raise MalformedUtility("need K slopes and K+1 breakpoints")
        if not all(np.isfinite(self.breakpoints)) or not all(np.isfinite(self.slopes)):
            raise MalformedUtility("utility parameters must be finite")
        diffs = np.diff(self.breakpoints)
        if np.any(diffs <= 0):
            raise MalformedUtility("breakpoints must be strictly increasing")
        if np.any(np.diff(self.slopes) > 1e-12):
            raise MalformedUtility("slopes must be non-increasing")

    @property
    def n_segments(self) -> int:
        return len(self.slopes)

    @property
    def domain(self) -> tuple[float, float]:
        return self.breakpoints[0], self.breakpoints[-1]

    def segment_intercepts(self) -> np.ndarray:
        """Value at zero consumption of each segment's affine extension."""
        starts = np.asarray(self.breakpoints[:-1])
        values = self.alpha + np.concatenate(
            [[0.0], np.cumsum(np.asarray(self.slopes[:-1]) * np.diff(starts))])
        return values - np.asarray(self.slopes) * starts


def utility_value(utility: PwlUtility, power: float) -> float:
    """Evaluate the concave utility, the minimum of its segment lines."""
    lo, hi = utility.domain
    tol = 1e-9 * (1.0 + max(abs(lo), abs(hi)))
    if power < lo - tol or power > hi + tol:
        raise OutOfDomain(f"consumption {power} outside [{lo}, {hi}]")
    lines = utility.segment_intercepts() + np.asarray(utility.slopes) * power
    return float(np.min(lines))


@dataclass(frozen=True)
class Battery:
    e_min: float
    e_max: float
    p_charge_max: float
    p_discharge_max: float
    efficiency: float
    initial_energy: float

    def __post_init__(self):
        if not 0 < self.efficiency < 1:
            raise ValueError("efficiency must lie strictly between 0 and 1")
        if min(self.p_charge_max, self.p_discharge_max) < 0:
            raise ValueError("power capacities must be nonnegative")
        if not self.e_min <= self.initial_energy <= self.e_max:
            raise ValueError("initial energy outside the usable range")


@dataclass(frozen=True)
class Prosumer:
    prosumer_id: str
    bus: int
    p_min: tuple          # per-period consumption floor [kW]
    p_max: tuple          # per-period consumption cap [kW]
    renewable: tuple      # per-period renewable output [kW]
    utilities: tuple      # one PwlUtility per period
    battery: Battery

    def __post_init__(self):
        object.__setattr__(self, "p_min", tuple(float(v) for v in self.p_min))
        object.__setattr__(self, "p_max", tuple(float(v) for v in self.p_max))
        object.__setattr__(self, "renewable", tuple(float(v) for v in self.renewable))
        object.__setattr__(self, "utilities", tuple(self.utilities))
        t = len(self.p_min)
        if not (len(self.p_max) == len(self.renewable) == len(self.utilities) == t):
            raise ValueError(f"prosumer {self.prosumer_id}: per-period fields disagree on horizon")
        for a, b in zip(self.p_min, self.p_max):
            if a > b:
                raise ValueError(f"prosumer {self.prosumer_id}: consumption floor above cap")
        for t_idx, u in enumerate(self.utilities):
            lo, hi = u.domain
            tol = 1e-9 * (1.0 + abs(hi))
            if lo > self.p_min[t_idx] + tol or hi < self.p_max[t_idx] - tol:
                raise MalformedUtility(
                    f"prosumer {self.prosumer_id}, period {t_idx}: utility domain "
                    f"[{lo}, {hi}] does not cover consumption bounds")

    @property
    def horizon(self) -> int:
        return len(self.p_min)


@dataclass(frozen=True)
class ProsumerFleet:
    prosumers: tuple

    def __post_init__(self):
        object.__setattr__(self, "prosumers", tuple(self.prosumers))
        if not self.prosumers:
            raise ValueError("fleet is empty")
        t = self.prosumers[0].horizon
        if any(p.horizon != t for p in self.prosumers):
            raise ValueError("prosumers disagree on horizon")
        ids = [p.prosumer_id for p in self.prosumers]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate prosumer ids")

    @property
    def horizon(self) -> int:
        return self.prosumers[0].horizon

    def index_of(self, prosumer_id: str) -> int:
        for k, p in enumerate(self.prosumers):
            if p.prosumer_id == prosumer_id:
                return k
        raise KeyError(prosumer_id)


@dataclass(frozen=True)
class TradeGraph:
    """Directed purchase channels between prosumers.

    A channel (i, j) lets i buy up to its cap from j each period; the
    reverse channel must exist with the same cap so the capability is
    undirected even though the variables are directed.
    """

    pairs: tuple            # ((buyer_id, seller_id, cap_kw), ...)
    horizon: int
    period_hours: float = 1.0

    def __post_init__(self):
        norm = tuple((str(a), str(b), float(c)) for a, b, c in self.pairs)
        object.__setattr__(self, "pairs", norm)
        if self.period_hours <= 0:
            raise ValueError("period length must be positive")
        caps = {(a, b): c for a, b, c in norm}
        if len(caps) != len(norm):
            raise ValueError("duplicate trade pair")
        for (a, b), c in caps.items():
            if a == b:
                raise ValueError(f"self-trade {a}")
            if c < 0:
                raise ValueError("trade cap must be nonnegative")
            if caps.get((b, a)) != c:
                raise ValueError(f"pair ({a}, {b}) lacks a matching reverse channel")

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def all_pairs_graph(fleet: ProsumerFleet, cap_kw: float,
                    period_hours: float = 1.0) -> TradeGraph:
    ids = [p.prosumer_id for p in fleet.prosumers]
    pairs = [(a, b, cap_kw) for a in ids for b in ids if a != b]
    return TradeGraph(tuple(pairs), fleet.horizon, period_hours)


@dataclass
class LowerLevelProgram:
    """The market-clearing LP plus bidirectional symbol/column maps.

    Column symbols: ("trade", buyer, seller, t), ("demand", i, t),
    ("charge", i, t), ("discharge", i, t), ("energy", i, t) for the
    stored energy entering period t+1, and ("utility", i, t) for the
    epigraph value.  Row symbols: ("balance", i, t), ("dynamics", i, t),
    ("epigraph", i, t, k).  Indices i are prosumer ids, t counts from 0.
    """

    lp: LinearProgram
    columns: dict
    rows: dict
    fleet: ProsumerFleet
    graph: TradeGraph
    distances: np.ndarray
    gamma: float
    pair_distance: np.ndarray = field(default=None)

    def column_of(self, symbol) -> int:
        return self.columns[symbol]

    def row_of(self, symbol) -> int:
        return self.rows[symbol]

    def check_maps(self) -> None:
        ncols = {v for v in self.columns.values()}
        nrows = {v for v in self.rows.values()}
        if ncols != set(range(self.lp.n_cols)) or len(self.columns) != self.lp.n_cols:
            raise ValueError("column map is not a bijection")
        if nrows != set(range(self.lp.n_rows)) or len(self.rows) != self.lp.n_rows:
            raise ValueError("row map is not a bijection")


def build_lower_lp(fleet: ProsumerFleet, graph: TradeGraph,
                   distances: np.ndarray, gamma: float) -> LowerLevelProgram:
    """Assemble the market-clearing LP at a fixed network-charge price.

    Objective: sum of per-period utility epigraph values minus
    ``gamma * distance * trade`` over all purchase channels.  Rows:
    one power-balance inequality and one battery-dynamics equality per
    prosumer and period, one epigraph inequality per utility segment.
    Trade caps, consumption bounds, battery power and energy limits are
    variable bounds.
    """
    if gamma < 0:
        raise ValueError("price must be nonnegative")
    t_len = fleet.horizon
    if graph.horizon != t_len:
        raise ValueError("trade graph horizon does not match fleet")
    distances = np.asarray(distances, dtype=float)
    dt = graph.period_hours

    columns: dict = {}
    rows: dict = {}
    lower: list[float] = []
    upper: list[float] = []
    objective: list[float] = []

    def add_col(symbol, lo, hi, obj):
        columns[symbol] = len(lower)
        lower.append(lo)
        upper.append(hi)
        objective.append(obj)

    pair_distance = np.zeros(graph.n_pairs)
    for k, (buyer, seller, cap) in enumerate(graph.pairs):
        bus_b = fleet.prosumers[fleet.index_of(buyer)].bus
        bus_s = fleet.prosumers[fleet.index_of(seller)].bus
        if max(bus_b, bus_s) >= distances.shape[0]:
            raise MissingDistance(
                f"no distance entry for buses {bus_b}, {bus_s}")
        pair_distance[k] = distances[bus_b, bus_s]
        for t in range(t_len):
            add_col(("trade", buyer, seller, t), 0.0, cap,
                    -gamma * pair_distance[k])

    for p in fleet.prosumers:
        for t in range(t_len):
            add_col(("demand", p.prosumer_id, t), p.p_min[t], p.p_max[t], 0.0)
        for t in range(t_len):
            add_col(("charge", p.prosumer_id, t), 0.0, p.battery.p_charge_max, 0.0)
        for t in range(t_len):
            add_col(("discharge", p.prosumer_id, t), 0.0, p.battery.p_discharge_max, 0.0)
        for t in range(t_len):
            add_col(("energy", p.prosumer_id, t), p.battery.e_min, p.battery.e_max, 0.0)
        for t in range(t_len):
            add_col(("utility", p.prosumer_id, t), -np.inf, np.inf, 1.0)

    n_cols = len(lower)
    row_entries: list[tuple] = []   # (row index, col index, coefficient)
    senses: list[str] = []
    rhs: list[float] = []

    def add_row(symbol, sense, b):
        rows[symbol] = len(rhs)
        senses.append(sense)
        rhs.append(b)
        return rows[symbol]

    for p in fleet.prosumers:
        pid = p.prosumer_id
        eta = p.battery.efficiency
        for t in range(t_len):
            r = add_row(("balance", pid, t), RowSense.LE, p.renewable[t])
            row_entries.append((r, columns[("demand", pid, t)], 1.0))
            row_entries.append((r, columns[("charge", pid, t)], 1.0))
            row_entries.append((r, columns[("discharge", pid, t)], -1.0))
        for t in range(t_len):
            init = p.battery.initial_energy if t == 0 else 0.0
            r = add_row(("dynamics", pid, t), RowSense.EQ, init)
            row_entries.append((r, columns[("energy", pid, t)], 1.0))
            if t > 0:
                row_entries.append((r, columns[("energy", pid, t - 1)], -1.0))
            row_entries.append((r, columns[("charge", pid, t)], -eta * dt))
            row_entries.append((r, columns[("discharge", pid, t)], dt / eta))
        for t in range(t_len):
            u = p.utilities[t]
            intercepts = u.segment_intercepts()
            for k in range(u.n_segments):
                r = add_row(("epigraph", pid, t, k), RowSense.LE, float(intercepts[k]))
                row_entries.append((r, columns[("utility", pid, t)], 1.0))
                row_entries.append((r, columns[("demand", pid, t)], -u.slopes[k]))

    for k, (buyer, seller, _cap) in enumerate(graph.pairs):
        for t in range(t_len):
            col = columns[("trade", buyer, seller, t)]
            row_entries.append((rows[("balance", seller, t)], col, 1.0))
            row_entries.append((rows[("balance", buyer, t)], col, -1.0))

    a = np.zeros((len(rhs), n_cols))
    for r, c, v in row_entries:
        a[r, c] += v

    lp = LinearProgram(
        objective=np.asarray(objective),
        a_matrix=a,
        senses=np.asarray(senses),
        rhs=np.asarray(rhs),
        lower=np.asarray(lower),
        upper=np.asarray(upper),
    )
    program = LowerLevelProgram(
        lp=lp, columns=columns, rows=rows, fleet=fleet, graph=graph,
        distances=distances, gamma=gamma, pair_distance=pair_distance)
    program.check_maps()
    return program


def reprice(program: LowerLevelProgram, gamma: float) -> LowerLevelProgram:
    """The same market program at a different price.

    Only trade objective coefficients depend on the price, so the
    constraint matrix and index maps are shared, not copied.
    """
    if gamma < 0:
        raise ValueError("price must be nonnegative")
    objective = program.lp.objective.copy()
    for k, (buyer, seller, _cap) in enumerate(program.graph.pairs):
        coef = -gamma * program.pair_distance[k]
        for t in range(program.fleet.horizon):
            objective[program.columns[("trade", buyer, seller, t)]] = coef
    lp = LinearProgram(
        objective=objective,
        a_matrix=program.lp.a_matrix,
        senses=program.lp.senses,
        rhs=program.lp.rhs,
        lower=program.lp.lower,
        upper=program.lp.upper,
    )
    return LowerLevelProgram(
        lp=lp, columns=program.columns, rows=program.rows,
        fleet=program.fleet, graph=program.graph,
        distances=program.distances, gamma=gamma,
        pair_distance=program.pair_distance)


@dataclass
class MarketResponse:
    """Solved market state at one price, with primal and dual values."""

    gamma: float
    program: LowerLevelProgram
    solution: object
    prosumer_profit: float
    z_volume: float                 # distance-weighted traded power [kW-distance]
    total_transaction_kwh: float
    injections: np.ndarray          # prosumer x period net injection [kW]

    def value(self, symbol) -> float:
        return float(self.solution.x[self.program.columns[symbol]])

    def dual(self, symbol) -> float:
        return float(self.solution.duals[self.program.rows[symbol]])

    def reduced_cost(self, symbol) -> float:
        return float(self.solution.reduced_costs[self.program.columns[symbol]])

    def bound_dual(self, symbol) -> tuple[float, float]:
        """Multipliers of the column's lower and upper bound, split from
        the reduced cost (lower-bound part, upper-bound part)."""
        d = self.reduced_cost(symbol)
        return max(-d, 0.0), max(d, 0.0)

    def trade_matrix(self) -> np.ndarray:
        """Total energy purchased over the horizon, buyer x seller [kWh]."""
        fleet = self.program.fleet
        n = len(fleet.prosumers)
        out = np.zeros((n, n))
        dt = self.program.graph.period_hours
        for buyer, seller, _cap in self.program.graph.pairs:
            bi = fleet.index_of(buyer)
            si = fleet.index_of(seller)
            for t in range(fleet.horizon):
                out[bi, si] += self.value(("trade", buyer, seller, t)) * dt
        return out

    def bus_injections(self, n_buses: int) -> np.ndarray:
        out = np.zeros((n_buses, self.program.fleet.horizon))
        for k, p in enumerate(self.program.fleet.prosumers):
            out[p.bus] += self.injections[k]
        return out

    def total_utility(self) -> float:
        total = 0.0
        for p in self.program.fleet.prosumers:
            for t in range(self.program.fleet.horizon):
                total += utility_value(
                    p.utilities[t],
                    min(max(self.value(("demand", p.prosumer_id, t)), p.p_min[t]), p.p_max[t]))
        return total

    def curtailment(self) -> float:
        """Renewable power left unused, from balance-row slack [kWh]."""
        total = 0.0
        lp = self.program.lp
        row_vals = lp.a_matrix @ self.solution.x
        dt = self.program.graph.period_hours
        for (kind, *_rest), r in self.program.rows.items():
            if kind == "balance":
                total += (lp.rhs[r] - row_vals[r]) * dt
        return float(total)


def response_from_point(program: LowerLevelProgram, solution) -> MarketResponse:
    """Wrap a solved point of the market LP in a MarketResponse."""
    fleet = program.fleet
    t_len = fleet.horizon
    x = solution.x
    z = 0.0
    total = 0.0
    injections = np.zeros((len(fleet.prosumers), t_len))
    for k, (buyer, seller, _cap) in enumerate(program.graph.pairs):
        bi = fleet.index_of(buyer)
        si = fleet.index_of(seller)
        for t in range(t_len):
            v = float(x[program.columns[("trade", buyer, seller, t)]])
            z += program.pair_distance[k] * v
            total += v * program.graph.period_hours
            injections[si, t] += v
            injections[bi, t] -= v
    profit = float(program.lp.objective @ x)
    return MarketResponse(
        gamma=program.gamma,
        program=program,
        solution=solution,
        prosumer_profit=profit,
        z_volume=z,
        total_transaction_kwh=total,
        injections=injections,
    )


def solve_market(program: LowerLevelProgram, options=None,
                 warm_start=None, backend=None) -> MarketResponse:
    """Solve the market LP; the optimum always exists (zero trading with
    floor consumption is feasible, utilities bound the value above)."""
    if backend is None:
        solution = solve_lp(program.lp, options, warm_start)
    else:
        solution = backend.solve_lp(program.lp, options, warm_start)
    if solution.status != Status.OPTIMAL:
        raise AssertionError(
            f"market program unexpectedly {solution.status.name}")
    return response_from_point(program, solution)


@dataclass
class MarketMetrics:
    gamma: float
    network_charge_revenue: float
    transmission_loss_cost: float
    grid_profit: float
    prosumer_profit: float
    total_utility: float
    social_profit: float
    z_volume: float
    total_transaction_kwh: float
    line_violations: list
    curtailment_kwh: float
    flow: object


def market_metrics(response: MarketResponse, network, rho: float,
                   gamma: float | None = None) -> MarketMetrics:
    """Grid-side and welfare metrics for one market outcome.

    The network charge cancels between the two sides, so grid profit
    plus prosumer profit always equals total utility minus the
    transmission-loss cost.
    """
    from .network import solve_dc_flow, transmission_loss

    if gamma is None:
        gamma = response.gamma
    bus_p = response.bus_injections(network.n_buses)
    flow = solve_dc_flow(network, bus_p)
    loss_cost = transmission_loss(network, flow, rho)
    revenue = gamma * response.z_volume
    total_utility = response.total_utility()
    prosumer_profit = total_utility - gamma * response.z_volume
    return MarketMetrics(
        gamma=gamma,
        network_charge_revenue=revenue,
        transmission_loss_cost=loss_cost,
        grid_profit=revenue - loss_cost,
        prosumer_profit=prosumer_profit,
        total_utility=total_utility,
        social_profit=total_utility - loss_cost,
        z_volume=response.z_volume,
        total_transaction_kwh=response.total_transaction_kwh,
        line_violations=list(flow.violations),
        curtailment_kwh=response.curtailment(),
        flow=flow,
    )
