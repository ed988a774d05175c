"""Scenario files, deterministic generation, and market presets.

A scenario is a single JSON document (schema version 1, documented in
``docs/schema.md``) bundling the network, the prosumer fleet, the trade
graph, and the price-sweep parameters.  Serialization is canonical:
fixed key order, shortest round-trip float rendering, two-space indent.
Loading a generated file and dumping it again reproduces the bytes
exactly, so fixtures stay diff-able and runs stay replayable.

The module also ships deterministic scenario generation on bundled bus
templates (synthetic 24-hour demand and renewable shapes, seeded slope
draws) and the four market presets used for comparison runs: no trading,
free trading at a vanishing charge, the welfare-maximal dispatch, and
the operator's optimal charge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bilevel import PriceGrid, social_optimum, solve_equilibrium
from .errors import ParseError, UnknownTemplate, ValidationError
from .market import (
    Battery,
    MarketMetrics,
    Prosumer,
    ProsumerFleet,
    PwlUtility,
    TradeGraph,
    build_lower_lp,
    market_metrics,
    solve_market,
)
from .network import BusNetwork

SCHEMA_VERSION = 1
DEFAULT_TRADE_CAP = 100.0    # kW per directed channel in "all" mode
FREE_TRADE_GAMMA = 1e-7      # vanishing charge used by the free-trading preset

_DATA_DIR = Path(__file__).parent / "data"

_POWER_UNITS = {"kW": 1.0, "MW": 1000.0}


def data_file(name: str) -> Path:
    """Path of a bundled data file (templates, shapes, sample scenarios)."""
    return _DATA_DIR / name


# ---------------------------------------------------------------------------
# scenario object


@dataclass(frozen=True)
class Provenance:
    """Where a scenario came from; carried verbatim through round trips."""

    generator: str = "manual"
    version: int = 1
    template: str | None = None
    seed: int | None = None
    es_enabled: bool | None = None


@dataclass(frozen=True)
class Scenario:
    """Validated scenario with all derived network matrices computed.

    ``trade_spec`` remembers how the trade graph was written in the file,
    either ``("all", cap)`` or ``("pairs", ((a, b, cap), ...))`` with
    undirected pairs, so serialization can reproduce the compact form.
    """

    network: BusNetwork
    fleet: ProsumerFleet
    graph: TradeGraph
    grid: PriceGrid
    rho: float
    provenance: Provenance = field(default_factory=Provenance)
    trade_spec: tuple = ("all", DEFAULT_TRADE_CAP)

    @property
    def horizon(self) -> int:
        return self.fleet.horizon

    @property
    def period_hours(self) -> float:
        return self.graph.period_hours


# ---------------------------------------------------------------------------
# validation helpers (JSON-pointer error paths)


def _fail(pointer: str, message: str):
    raise ValidationError(pointer or "/", message)


def _as_object(value, pointer: str) -> dict:
    if not isinstance(value, dict):
        _fail(pointer, "expected an object")
    return value


def _as_array(value, pointer: str, length: int | None = None) -> list:
    if not isinstance(value, list):
        _fail(pointer, "expected an array")
    if length is not None and len(value) != length:
        _fail(pointer, f"expected {length} entries, found {len(value)}")
    return value


def _as_number(value, pointer: str, minimum=None, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(pointer, "expected a number")
    out = float(value)
    if not np.isfinite(out):
        _fail(pointer, "expected a finite number")
    if positive and out <= 0:
        _fail(pointer, f"must be positive, found {out}")
    if minimum is not None and out < minimum:
        _fail(pointer, f"must be at least {minimum}, found {out}")
    return out


def _as_int(value, pointer: str, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(pointer, "expected an integer")
    if minimum is not None and value < minimum:
        _fail(pointer, f"must be at least {minimum}, found {value}")
    return int(value)


def _as_string(value, pointer: str, choices=None) -> str:
    if not isinstance(value, str):
        _fail(pointer, "expected a string")
    if choices is not None and value not in choices:
        _fail(pointer, f"expected one of {sorted(choices)}, found {value!r}")
    return value


def _as_bool(value, pointer: str) -> bool:
    if not isinstance(value, bool):
        _fail(pointer, "expected true or false")
    return value


def _require(obj: dict, key: str, pointer: str):
    if key not in obj:
        _fail(f"{pointer}/{key}", "missing required field")
    return obj[key]


def _reject_unknown(obj: dict, known: set, pointer: str) -> None:
    for key in obj:
        if key not in known:
            _fail(f"{pointer}/{key}", "unknown field")


def _number_array(value, pointer: str, length: int, minimum=None) -> tuple:
    arr = _as_array(value, pointer, length)
    return tuple(_as_number(v, f"{pointer}/{k}", minimum=minimum)
                 for k, v in enumerate(arr))


# ---------------------------------------------------------------------------
# loading


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file.

    Identical bytes always produce an identical scenario.  Raises
    ParseError for unreadable or non-JSON input, ValidationError with a
    JSON-pointer path for schema violations, and DisconnectedNetwork
    when the line list does not span the buses.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return loads_scenario(text)


def loads_scenario(text: str) -> Scenario:
    """Parse a scenario from JSON text; see load_scenario for errors."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    return scenario_from_document(doc)


def scenario_from_document(doc) -> Scenario:
    root = _as_object(doc, "")
    _reject_unknown(root, {"schema", "provenance", "units", "network",
                           "prosumers", "trade_graph", "market"}, "")
    schema = _as_int(_require(root, "schema", ""), "/schema")
    if schema != SCHEMA_VERSION:
        _fail("/schema", f"unsupported schema version {schema}")
    scale = _parse_units(root.get("units"), "/units")
    provenance = _parse_provenance(root.get("provenance"), "/provenance")
    grid, rho, horizon, period_hours = _parse_market(
        _require(root, "market", ""), "/market")
    network = _parse_network(_require(root, "network", ""), "/network", scale)
    fleet = _parse_prosumers(_require(root, "prosumers", ""), "/prosumers",
                             horizon, network.n_buses, scale)
    graph, trade_spec = _parse_trade_graph(
        _require(root, "trade_graph", ""), "/trade_graph",
        fleet, horizon, period_hours, scale)
    return Scenario(network=network, fleet=fleet, graph=graph, grid=grid,
                    rho=rho, provenance=provenance, trade_spec=trade_spec)


def _parse_units(value, pointer: str) -> float:
    """Power-unit scale factor to kW; energies and breakpoints follow it,
    utility slopes scale inversely (money per unit power)."""
    if value is None:
        return 1.0
    obj = _as_object(value, pointer)
    _reject_unknown(obj, {"power"}, pointer)
    unit = _as_string(obj.get("power", "kW"), f"{pointer}/power",
                      choices=set(_POWER_UNITS))
    return _POWER_UNITS[unit]


def _parse_provenance(value, pointer: str) -> Provenance:
    if value is None:
        return Provenance()
    obj = _as_object(value, pointer)
    _reject_unknown(obj, {"generator", "version", "template", "seed",
                          "es_enabled"}, pointer)
    generator = _as_string(obj.get("generator", "manual"),
                           f"{pointer}/generator")
    version = _as_int(obj.get("version", 1), f"{pointer}/version", minimum=0)
    template = obj.get("template")
    if template is not None:
        template = _as_string(template, f"{pointer}/template")
    seed = obj.get("seed")
    if seed is not None:
        seed = _as_int(seed, f"{pointer}/seed")
    es_enabled = obj.get("es_enabled")
    if es_enabled is not None:
        es_enabled = _as_bool(es_enabled, f"{pointer}/es_enabled")
    return Provenance(generator=generator, version=version, template=template,
                      seed=seed, es_enabled=es_enabled)


def _parse_market(value, pointer: str):
    obj = _as_object(value, pointer)
    _reject_unknown(obj, {"gamma_min", "gamma_max", "levels", "dgamma",
                          "rho", "horizon", "period_hours"}, pointer)
    gamma_min = _as_number(_require(obj, "gamma_min", pointer),
                           f"{pointer}/gamma_min", minimum=0.0)
    gamma_max = _as_number(_require(obj, "gamma_max", pointer),
                           f"{pointer}/gamma_max", minimum=0.0)
    if gamma_max < gamma_min:
        _fail(f"{pointer}/gamma_max", "must be at least gamma_min")
    if "levels" in obj and "dgamma" in obj:
        _fail(f"{pointer}/dgamma", "give either levels or dgamma, not both")
    if "levels" in obj:
        levels = _as_int(obj["levels"], f"{pointer}/levels", minimum=1)
        if levels == 1 and gamma_max != gamma_min:
            _fail(f"{pointer}/levels",
                  "a single level needs gamma_min == gamma_max")
        grid = PriceGrid(gamma_min, gamma_max, levels)
    elif "dgamma" in obj:
        dgamma = _as_number(obj["dgamma"], f"{pointer}/dgamma", positive=True)
        try:
            grid = PriceGrid.from_spacing(gamma_min, gamma_max, dgamma)
        except ValueError as exc:
            _fail(f"{pointer}/dgamma", str(exc))
    else:
        _fail(f"{pointer}/levels", "missing required field")
    rho = _as_number(_require(obj, "rho", pointer), f"{pointer}/rho",
                     minimum=0.0)
    horizon = _as_int(_require(obj, "horizon", pointer), f"{pointer}/horizon",
                      minimum=1)
    period_hours = _as_number(obj.get("period_hours", 1.0),
                              f"{pointer}/period_hours", positive=True)
    return grid, rho, horizon, period_hours


def _parse_network(value, pointer: str, scale: float) -> BusNetwork:
    obj = _as_object(value, pointer)
    _reject_unknown(obj, {"buses", "reference", "lines"}, pointer)
    n_buses = _as_int(_require(obj, "buses", pointer), f"{pointer}/buses",
                      minimum=1)
    reference = _as_int(obj.get("reference", 0), f"{pointer}/reference",
                        minimum=0)
    if reference >= n_buses:
        _fail(f"{pointer}/reference", f"bus {reference} does not exist")
    lines_doc = _as_array(_require(obj, "lines", pointer), f"{pointer}/lines")
    lines = []
    for k, entry in enumerate(lines_doc):
        lp = f"{pointer}/lines/{k}"
        line = _as_object(entry, lp)
        _reject_unknown(line, {"from", "to", "x", "limit"}, lp)
        f_bus = _as_int(_require(line, "from", lp), f"{lp}/from", minimum=0)
        t_bus = _as_int(_require(line, "to", lp), f"{lp}/to", minimum=0)
        for name, bus in (("from", f_bus), ("to", t_bus)):
            if bus >= n_buses:
                _fail(f"{lp}/{name}", f"bus {bus} does not exist")
        if f_bus == t_bus:
            _fail(f"{lp}/to", "line endpoints coincide")
        x = _as_number(_require(line, "x", lp), f"{lp}/x", positive=True)
        limit = np.inf
        if "limit" in line:
            limit = _as_number(line["limit"], f"{lp}/limit", minimum=0.0)
            limit *= scale
        lines.append((f_bus, t_bus, x, limit))
    return BusNetwork(n_buses, lines, reference)


def _parse_battery(value, pointer: str, scale: float) -> Battery:
    obj = _as_object(value, pointer)
    keys = {"e_min", "e_max", "p_charge_max", "p_discharge_max",
            "efficiency", "initial_energy"}
    _reject_unknown(obj, keys, pointer)
    vals = {k: _as_number(_require(obj, k, pointer), f"{pointer}/{k}")
            for k in keys}
    if vals["e_min"] < 0:
        _fail(f"{pointer}/e_min", "must be nonnegative")
    if vals["e_max"] < vals["e_min"]:
        _fail(f"{pointer}/e_max", "must be at least e_min")
    for k in ("p_charge_max", "p_discharge_max"):
        if vals[k] < 0:
            _fail(f"{pointer}/{k}", "must be nonnegative")
    if not 0 < vals["efficiency"] < 1:
        _fail(f"{pointer}/efficiency", "must lie strictly between 0 and 1")
    if not vals["e_min"] <= vals["initial_energy"] <= vals["e_max"]:
        _fail(f"{pointer}/initial_energy", "outside the usable range")
    return Battery(
        e_min=vals["e_min"] * scale,
        e_max=vals["e_max"] * scale,
        p_charge_max=vals["p_charge_max"] * scale,
        p_discharge_max=vals["p_discharge_max"] * scale,
        efficiency=vals["efficiency"],
        initial_energy=vals["initial_energy"] * scale,
    )


def _parse_utility(value, pointer: str, p_min: float, p_max: float,
                   scale: float) -> PwlUtility:
    obj = _as_object(value, pointer)
    _reject_unknown(obj, {"alpha", "breakpoints", "slopes"}, pointer)
    alpha = _as_number(obj.get("alpha", 0.0), f"{pointer}/alpha")
    breaks_doc = _as_array(_require(obj, "breakpoints", pointer),
                           f"{pointer}/breakpoints")
    if len(breaks_doc) < 2:
        _fail(f"{pointer}/breakpoints", "need at least two breakpoints")
    breaks = [_as_number(v, f"{pointer}/breakpoints/{k}")
              for k, v in enumerate(breaks_doc)]
    for k in range(1, len(breaks)):
        if breaks[k] <= breaks[k - 1]:
            _fail(f"{pointer}/breakpoints/{k}", "must be strictly increasing")
    slopes_doc = _as_array(_require(obj, "slopes", pointer),
                           f"{pointer}/slopes", length=len(breaks) - 1)
    slopes = [_as_number(v, f"{pointer}/slopes/{k}")
              for k, v in enumerate(slopes_doc)]
    for k in range(1, len(slopes)):
        if slopes[k] > slopes[k - 1] + 1e-12:
            _fail(f"{pointer}/slopes/{k}", "must be non-increasing")
    lo, hi = breaks[0] * scale, breaks[-1] * scale
    tol = 1e-9 * (1.0 + abs(hi))
    if lo > p_min + tol or hi < p_max - tol:
        _fail(f"{pointer}/breakpoints",
              f"domain [{lo}, {hi}] does not cover consumption "
              f"bounds [{p_min}, {p_max}]")
    return PwlUtility(alpha=alpha,
                      breakpoints=tuple(b * scale for b in breaks),
                      slopes=tuple(s / scale for s in slopes))


def _parse_prosumers(value, pointer: str, horizon: int, n_buses: int,
                     scale: float) -> ProsumerFleet:
    arr = _as_array(value, pointer)
    if not arr:
        _fail(pointer, "need at least one prosumer")
    prosumers = []
    seen = set()
    for i, entry in enumerate(arr):
        pp = f"{pointer}/{i}"
        obj = _as_object(entry, pp)
        _reject_unknown(obj, {"id", "bus", "demand_min", "demand_max",
                              "renewable", "utility", "battery"}, pp)
        pid = _as_string(_require(obj, "id", pp), f"{pp}/id")
        if not pid:
            _fail(f"{pp}/id", "must not be empty")
        if pid in seen:
            _fail(f"{pp}/id", f"duplicate prosumer id {pid!r}")
        seen.add(pid)
        bus = _as_int(_require(obj, "bus", pp), f"{pp}/bus", minimum=0)
        if bus >= n_buses:
            _fail(f"{pp}/bus", f"bus {bus} does not exist")
        p_min = _number_array(_require(obj, "demand_min", pp),
                              f"{pp}/demand_min", horizon, minimum=0.0)
        p_max = _number_array(_require(obj, "demand_max", pp),
                              f"{pp}/demand_max", horizon, minimum=0.0)
        for t in range(horizon):
            if p_max[t] < p_min[t]:
                _fail(f"{pp}/demand_max/{t}", "below demand_min")
        renewable = _number_array(_require(obj, "renewable", pp),
                                  f"{pp}/renewable", horizon, minimum=0.0)
        util_doc = _as_array(_require(obj, "utility", pp), f"{pp}/utility",
                             length=horizon)
        utilities = [
            _parse_utility(u, f"{pp}/utility/{t}",
                           p_min[t] * scale, p_max[t] * scale, scale)
            for t, u in enumerate(util_doc)]
        battery = _parse_battery(_require(obj, "battery", pp),
                                 f"{pp}/battery", scale)
        prosumers.append(Prosumer(
            prosumer_id=pid,
            bus=bus,
            p_min=tuple(v * scale for v in p_min),
            p_max=tuple(v * scale for v in p_max),
            renewable=tuple(v * scale for v in renewable),
            utilities=tuple(utilities),
            battery=battery,
        ))
    return ProsumerFleet(tuple(prosumers))


def _parse_trade_graph(value, pointer: str, fleet: ProsumerFleet,
                       horizon: int, period_hours: float, scale: float):
    obj = _as_object(value, pointer)
    mode = _as_string(_require(obj, "mode", pointer), f"{pointer}/mode",
                      choices={"all", "pairs"})
    ids = {p.prosumer_id for p in fleet.prosumers}
    if mode == "all":
        _reject_unknown(obj, {"mode", "cap"}, pointer)
        cap = _as_number(obj.get("cap", DEFAULT_TRADE_CAP), f"{pointer}/cap",
                         minimum=0.0) * scale
        pairs = [(a, b, cap) for a in sorted(ids) for b in sorted(ids)
                 if a != b]
        graph = TradeGraph(tuple(pairs), horizon, period_hours)
        return graph, ("all", cap)
    _reject_unknown(obj, {"mode", "pairs"}, pointer)
    pairs_doc = _as_array(_require(obj, "pairs", pointer), f"{pointer}/pairs")
    undirected = []
    seen = set()
    for k, entry in enumerate(pairs_doc):
        kp = f"{pointer}/pairs/{k}"
        pair = _as_object(entry, kp)
        _reject_unknown(pair, {"a", "b", "cap"}, kp)
        a = _as_string(_require(pair, "a", kp), f"{kp}/a")
        b = _as_string(_require(pair, "b", kp), f"{kp}/b")
        for name, pid in (("a", a), ("b", b)):
            if pid not in ids:
                _fail(f"{kp}/{name}", f"unknown prosumer id {pid!r}")
        if a == b:
            _fail(f"{kp}/b", "pair endpoints coincide")
        key = (min(a, b), max(a, b))
        if key in seen:
            _fail(f"{kp}/b", f"duplicate pair {key}")
        seen.add(key)
        cap = _as_number(_require(pair, "cap", kp), f"{kp}/cap",
                         minimum=0.0) * scale
        undirected.append((a, b, cap))
    directed = []
    for a, b, cap in undirected:
        directed.append((a, b, cap))
        directed.append((b, a, cap))
    graph = TradeGraph(tuple(directed), horizon, period_hours)
    canonical = tuple(sorted((min(a, b), max(a, b), cap)
                             for a, b, cap in undirected))
    return graph, ("pairs", canonical)


# ---------------------------------------------------------------------------
# canonical serialization


def _floats(values) -> list:
    return [float(v) for v in values]


def scenario_document(scenario: Scenario) -> dict:
    """Canonical JSON document for a scenario (fixed key order, kW units)."""
    prov = scenario.provenance
    lines = []
    for ln in scenario.network.lines:
        entry = {"from": int(ln.from_bus), "to": int(ln.to_bus),
                 "x": float(ln.reactance)}
        if np.isfinite(ln.limit):
            entry["limit"] = float(ln.limit)
        lines.append(entry)
    prosumers = []
    for p in scenario.fleet.prosumers:
        prosumers.append({
            "id": p.prosumer_id,
            "bus": int(p.bus),
            "demand_min": _floats(p.p_min),
            "demand_max": _floats(p.p_max),
            "renewable": _floats(p.renewable),
            "utility": [{"alpha": float(u.alpha),
                         "breakpoints": _floats(u.breakpoints),
                         "slopes": _floats(u.slopes)}
                        for u in p.utilities],
            "battery": {
                "e_min": float(p.battery.e_min),
                "e_max": float(p.battery.e_max),
                "p_charge_max": float(p.battery.p_charge_max),
                "p_discharge_max": float(p.battery.p_discharge_max),
                "efficiency": float(p.battery.efficiency),
                "initial_energy": float(p.battery.initial_energy),
            },
        })
    mode = scenario.trade_spec[0]
    if mode == "all":
        trade_graph = {"mode": "all", "cap": float(scenario.trade_spec[1])}
    else:
        trade_graph = {"mode": "pairs", "pairs": [
            {"a": a, "b": b, "cap": float(cap)}
            for a, b, cap in scenario.trade_spec[1]]}
    return {
        "schema": SCHEMA_VERSION,
        "provenance": {
            "generator": prov.generator,
            "version": int(prov.version),
            "template": prov.template,
            "seed": None if prov.seed is None else int(prov.seed),
            "es_enabled": prov.es_enabled,
        },
        "units": {"power": "kW"},
        "network": {
            "buses": int(scenario.network.n_buses),
            "reference": int(scenario.network.reference),
            "lines": lines,
        },
        "prosumers": prosumers,
        "trade_graph": trade_graph,
        "market": {
            "gamma_min": float(scenario.grid.gamma_min),
            "gamma_max": float(scenario.grid.gamma_max),
            "levels": int(scenario.grid.n_levels),
            "rho": float(scenario.rho),
            "horizon": int(scenario.horizon),
            "period_hours": float(scenario.period_hours),
        },
    }


def dumps_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario_document(scenario), indent=2,
                      allow_nan=False) + "\n"


def dump_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(scenario), encoding="utf-8")


# ---------------------------------------------------------------------------
# profile CSV import

PROFILE_KINDS = ("demand_max", "renewable")


def read_profile_csv(path):
    """Parse a per-period profile table.

    Expected header: ``period,prosumer_id,kind,value`` with kind one of
    demand_max or renewable, periods 0-based.  Returns a nested dict
    ``{prosumer_id: {kind: {period: value}}}``.
    """
    import csv

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: empty profile file") from None
    expected = ["period", "prosumer_id", "kind", "value"]
    if [h.strip() for h in header] != expected:
        raise ParseError(
            f"{path}: header must be {','.join(expected)}")
    out: dict = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 columns")
        period_s, pid, kind, value_s = (cell.strip() for cell in row)
        try:
            period = int(period_s)
        except ValueError:
            raise ParseError(
                f"{path}:{lineno}: period {period_s!r} is not an integer"
            ) from None
        if period < 0:
            raise ParseError(f"{path}:{lineno}: period must be nonnegative")
        if kind not in PROFILE_KINDS:
            raise ParseError(
                f"{path}:{lineno}: kind must be one of {PROFILE_KINDS}")
        try:
            value = float(value_s)
        except ValueError:
            raise ParseError(
                f"{path}:{lineno}: value {value_s!r} is not a number"
            ) from None
        if not np.isfinite(value) or value < 0:
            raise ParseError(
                f"{path}:{lineno}: value must be finite and nonnegative")
        slot = out.setdefault(pid, {}).setdefault(kind, {})
        if period in slot:
            raise ParseError(
                f"{path}:{lineno}: duplicate entry for "
                f"({period}, {pid}, {kind})")
        slot[period] = value
    return out


def apply_profiles(scenario: Scenario, profiles: dict) -> Scenario:
    """Overlay imported profiles onto a scenario.

    ``demand_max`` replaces the consumption cap and re-spaces each
    period's utility breakpoints evenly over the new range, keeping the
    drawn slopes; ``renewable`` replaces the renewable output.  Every
    referenced prosumer must be covered for all periods.
    """
    horizon = scenario.horizon
    known = {p.prosumer_id for p in scenario.fleet.prosumers}
    for pid, kinds in profiles.items():
        if pid not in known:
            raise ParseError(f"profile references unknown prosumer {pid!r}")
        for kind, series in kinds.items():
            missing = sorted(set(range(horizon)) - set(series))
            extra = sorted(set(series) - set(range(horizon)))
            if missing or extra:
                raise ParseError(
                    f"profile ({pid}, {kind}): periods must cover exactly "
                    f"0..{horizon - 1}; missing {missing}, extra {extra}")
    prosumers = []
    for p in scenario.fleet.prosumers:
        kinds = profiles.get(p.prosumer_id)
        if not kinds:
            prosumers.append(p)
            continue
        renewable = p.renewable
        if "renewable" in kinds:
            renewable = tuple(kinds["renewable"][t] for t in range(horizon))
        p_max = p.p_max
        utilities = p.utilities
        if "demand_max" in kinds:
            p_max = tuple(kinds["demand_max"][t] for t in range(horizon))
            utilities = tuple(
                _respaced_utility(u, p.p_min[t], p_max[t])
                for t, u in enumerate(p.utilities))
        prosumers.append(replace(p, p_max=p_max, renewable=renewable,
                                 utilities=utilities))
    return replace(scenario, fleet=ProsumerFleet(tuple(prosumers)))


def _respaced_utility(utility: PwlUtility, lo: float, hi: float) -> PwlUtility:
    if hi <= lo:
        hi = lo + 1e-6
    points = np.linspace(lo, hi, utility.n_segments + 1)
    return PwlUtility(alpha=utility.alpha, breakpoints=tuple(points),
                      slopes=utility.slopes)


# ---------------------------------------------------------------------------
# deterministic generation

_TEMPLATES = {
    "ieee9": {
        "file": "ieee9.json",
        "graph": "all",
        "demand_peak": (18.0, 40.0),
        "renewable_peak": (25.0, 60.0),
        # P(solar), P(wind); remainder has none.  The solar-heavy split
        # keeps storage acting as a trade substitute on this small feeder
        # (owners shift their own midday surplus) rather than a night-time
        # arbitrage vehicle that would grow trade at high charges.
        "mix": (0.70, 0.20),
    },
    "ieee39": {
        "file": "ieee39.json",
        "graph": ("knn", 4),
        "demand_peak": (18.0, 40.0),
        "renewable_peak": (25.0, 60.0),
        "mix": (0.40, 0.40),
    },
    "ieee57": {
        "file": "ieee57.json",
        "graph": ("knn", 4),
        "demand_peak": (18.0, 40.0),
        "renewable_peak": (25.0, 60.0),
        "mix": (0.40, 0.40),
    },
    "ieee118": {
        "file": "ieee118.json",
        "graph": ("knn", 4),
        "demand_peak": (18.0, 40.0),
        "renewable_peak": (25.0, 60.0),
        "mix": (0.40, 0.40),
    },
}

_DEMAND_HEADROOM_KW = 30.0   # consumption cap above the demand profile
_ES_BATTERY = Battery(e_min=0.0, e_max=60.0, p_charge_max=50.0,
                      p_discharge_max=50.0, efficiency=0.9,
                      initial_energy=0.0)
_NO_BATTERY = Battery(e_min=0.0, e_max=0.0, p_charge_max=0.0,
                      p_discharge_max=0.0, efficiency=0.9,
                      initial_energy=0.0)


def _load_template_network(name: str) -> BusNetwork:
    spec = _TEMPLATES[name]
    doc = json.loads(data_file(spec["file"]).read_text(encoding="utf-8"))
    lines = [(int(f), int(t), float(x)) for f, t, x in doc["lines"]]
    return BusNetwork(int(doc["buses"]), lines, int(doc.get("reference", 0)))


def _load_shapes() -> dict:
    doc = json.loads(data_file("shapes.json").read_text(encoding="utf-8"))
    return {k: np.asarray(v, dtype=float)
            for k, v in doc.items() if isinstance(v, list)}


def _knn_pairs(ids, distances, buses, k: int) -> list:
    """Symmetric union of each prosumer's k nearest peers by electrical
    distance, with stable index tie-breaking."""
    chosen = set()
    for i in range(len(ids)):
        d = np.array([distances[buses[i], buses[j]] if j != i else np.inf
                      for j in range(len(ids))])
        order = np.argsort(d, kind="stable")
        for j in order[:k]:
            chosen.add((min(i, int(j)), max(i, int(j))))
    return sorted(chosen)


def generate_scenario(template: str, seed: int,
                      es_enabled: bool = True) -> Scenario:
    """Deterministic synthetic scenario on a bundled bus template.

    One prosumer per bus.  Demand and renewable profiles come from the
    bundled 24-hour shapes scaled by seeded draws; utility slopes are
    drawn uniformly on [0, 1) and sorted descending per period, with 2
    or 3 segments dividing the consumption range evenly.  The flag only
    switches the battery fields, so the draws, and hence everything
    else, match between the storage and no-storage variants of a seed.
    """
    if template not in _TEMPLATES:
        raise UnknownTemplate(
            f"unknown template {template!r}; bundled: "
            f"{', '.join(sorted(_TEMPLATES))}")
    spec = _TEMPLATES[template]
    network = _load_template_network(template)
    shapes = _load_shapes()
    horizon = len(shapes["residential"])
    rng = np.random.default_rng(seed)
    battery = _ES_BATTERY if es_enabled else _NO_BATTERY
    p_solar, p_wind = spec["mix"]

    prosumers = []
    for i in range(network.n_buses):
        demand_shape = ("residential", "commercial")[int(rng.integers(0, 2))]
        demand_peak = float(rng.uniform(*spec["demand_peak"]))
        kind_roll = float(rng.uniform())
        renew_peak = float(rng.uniform(*spec["renewable_peak"]))
        demand = np.round(demand_peak * shapes[demand_shape], 6)
        if kind_roll < p_solar:
            renewable = np.round(renew_peak * shapes["solar"], 6)
        elif kind_roll < p_solar + p_wind:
            renewable = np.round(renew_peak * shapes["wind"], 6)
        else:
            renewable = np.zeros(horizon)
        p_max = demand + _DEMAND_HEADROOM_KW
        utilities = []
        for t in range(horizon):
            k = 2 + int(rng.integers(0, 2))
            slopes = np.round(rng.uniform(0.0, 1.0, size=k), 6)
            slopes = np.sort(slopes)[::-1]
            points = np.round(np.linspace(0.0, p_max[t], k + 1), 6)
            points[0] = 0.0
            points[-1] = p_max[t]
            utilities.append(PwlUtility(alpha=0.0,
                                        breakpoints=tuple(points),
                                        slopes=tuple(slopes)))
        prosumers.append(Prosumer(
            prosumer_id=f"p{i + 1}",
            bus=i,
            p_min=(0.0,) * horizon,
            p_max=tuple(p_max),
            renewable=tuple(renewable),
            utilities=tuple(utilities),
            battery=battery,
        ))
    fleet = ProsumerFleet(tuple(prosumers))

    if spec["graph"] == "all":
        ids = sorted(p.prosumer_id for p in fleet.prosumers)
        pairs = [(a, b, DEFAULT_TRADE_CAP) for a in ids for b in ids
                 if a != b]
        graph = TradeGraph(tuple(pairs), horizon, 1.0)
        trade_spec = ("all", DEFAULT_TRADE_CAP)
    else:
        _mode, k = spec["graph"]
        ids = [p.prosumer_id for p in fleet.prosumers]
        buses = [p.bus for p in fleet.prosumers]
        undirected = [(min(ids[i], ids[j]), max(ids[i], ids[j]),
                       DEFAULT_TRADE_CAP)
                      for i, j in _knn_pairs(ids, network.distances, buses, k)]
        undirected = sorted(set(undirected))
        directed = []
        for a, b, cap in undirected:
            directed.append((a, b, cap))
            directed.append((b, a, cap))
        graph = TradeGraph(tuple(directed), horizon, 1.0)
        trade_spec = ("pairs", tuple(undirected))

    return Scenario(
        network=network,
        fleet=fleet,
        graph=graph,
        grid=PriceGrid(0.0, 1.0, 51),
        rho=0.01,
        provenance=Provenance(generator="gridcharge-generate", version=1,
                              template=template, seed=int(seed),
                              es_enabled=bool(es_enabled)),
        trade_spec=trade_spec,
    )


# ---------------------------------------------------------------------------
# market presets

MARKET_NAMES = ("NoP2P", "FreeP2P", "SocialP2P", "OptimalP2P")
_MARKET_LABELS = {
    "NoP2P": "No P2P",
    "FreeP2P": "Free P2P",
    "SocialP2P": "Social P2P",
    "OptimalP2P": "Optimal P2P",
}


@dataclass(frozen=True)
class MarketConfig:
    """One of the four comparison presets, with or without storage."""

    name: str
    es_enabled: bool = True

    def __post_init__(self):
        if self.name not in MARKET_NAMES:
            raise ValueError(
                f"unknown market {self.name!r}; expected one of "
                f"{', '.join(MARKET_NAMES)}")

    @property
    def label(self) -> str:
        suffix = "ES" if self.es_enabled else "no ES"
        return f"{_MARKET_LABELS[self.name]} ({suffix})"


def _without_storage(fleet: ProsumerFleet) -> ProsumerFleet:
    prosumers = tuple(
        replace(p, battery=replace(p.battery, e_max=0.0, p_charge_max=0.0,
                                   p_discharge_max=0.0, initial_energy=0.0))
        for p in fleet.prosumers)
    return ProsumerFleet(prosumers)


def without_storage(scenario: Scenario) -> Scenario:
    """Scenario with every battery's capacity and power limits zeroed."""
    return replace(scenario, fleet=_without_storage(scenario.fleet))


def apply_market_config(scenario: Scenario, config: MarketConfig) -> Scenario:
    """Derived scenario for a preset: storage optionally zeroed, and the
    trade graph emptied when no trading is allowed."""
    out = scenario
    if not config.es_enabled:
        out = replace(out, fleet=_without_storage(out.fleet))
    if config.name == "NoP2P":
        empty = TradeGraph((), out.horizon, out.period_hours)
        out = replace(out, graph=empty, trade_spec=("pairs", ()))
    return out


@dataclass
class MarketOutcome:
    """Evaluated preset: the derived scenario, its metrics, and whatever
    richer result the route produced."""

    config: MarketConfig
    scenario: Scenario
    metrics: MarketMetrics
    response: object = None        # MarketResponse when a single LP was run
    equilibrium: object = None     # EquilibriumResult for OptimalP2P


def evaluate_market(scenario: Scenario, config: MarketConfig,
                    options=None, workers: int = 1,
                    backend=None) -> MarketOutcome:
    """Run one preset end to end.

    NoP2P and FreeP2P solve the market program directly (at a zero and a
    vanishing charge); SocialP2P maximizes welfare within line limits;
    OptimalP2P searches the price grid for the operator's best level.
    """
    derived = apply_market_config(scenario, config)
    if config.name == "SocialP2P":
        metrics = social_optimum(derived, derived.rho, options,
                                 backend=backend)
        return MarketOutcome(config, derived, metrics)
    if config.name == "OptimalP2P":
        equilibrium = solve_equilibrium(derived, derived.grid, derived.rho,
                                        options, workers=workers,
                                        backend=backend)
        return MarketOutcome(config, derived, equilibrium.metrics,
                             response=equilibrium.response,
                             equilibrium=equilibrium)
    gamma = 0.0 if config.name == "NoP2P" else FREE_TRADE_GAMMA
    program = build_lower_lp(derived.fleet, derived.graph,
                             derived.network.distances, gamma)
    response = solve_market(program, options, backend=backend)
    metrics = market_metrics(response, derived.network, derived.rho,
                             gamma=gamma)
    return MarketOutcome(config, derived, metrics, response=response)
