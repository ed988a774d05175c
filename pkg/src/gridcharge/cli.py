"""Command line front end.

Subcommands cover the full pipeline: generating deterministic scenario
files, printing electrical distances, sweeping the charge price,
solving for the operator's optimal price, and comparing the four market
presets.  Every run that produces an output directory drops a
``manifest.json`` recording the command, inputs, and resolved settings
so the run can be replayed exactly.

Logging goes to stderr; data goes to stdout and files only.  Exit
codes: 0 success, 2 input problem, 3 no feasible price level, 4
numerical breakdown.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from .bilevel import PriceGrid, SweepResult, solve_equilibrium, sweep_prices
from .errors import (
    AllLevelsInfeasible,
    DisconnectedNetwork,
    InfiniteCap,
    IoError,
    MalformedUtility,
    MissingDistance,
    NonpositiveReactance,
    NumericalBreakdown,
    OutOfDomain,
    ParseError,
    SingularMatrix,
    UnknownTemplate,
    ValidationError,
)
from .numerics import resolve_backend
from .report import (
    emit_report,
    report_csv_text,
    sweep_csv_text,
    sweep_svg,
    trade_heatmap_svg,
    write_text,
)
from .scenario_io import (
    MARKET_NAMES,
    MarketConfig,
    dump_scenario,
    evaluate_market,
    generate_scenario,
    load_scenario,
    without_storage,
)

log = logging.getLogger("gridcharge")

_INPUT_ERRORS = (
    ParseError,
    ValidationError,
    UnknownTemplate,
    MalformedUtility,
    MissingDistance,
    OutOfDomain,
    InfiniteCap,
    NonpositiveReactance,
    DisconnectedNetwork,
    IoError,
    OSError,
)


@dataclass
class RunManifest:
    """Replay record written into every output directory."""

    command: str
    scenario: str | None
    price_grid: dict | None
    rho: float | None
    seed: int | None
    out: str
    solver: str
    parallel: int


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    text = json.dumps(asdict(manifest), indent=2) + "\n"
    return write_text(Path(out_dir) / "manifest.json", text)


# ---------------------------------------------------------------------------
# shared flag handling


def _add_grid_flags(parser) -> None:
    parser.add_argument("--gamma-min", type=float, default=None,
                        help="lowest candidate price (default: scenario)")
    parser.add_argument("--gamma-max", type=float, default=None,
                        help="highest candidate price (default: scenario)")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--dgamma", type=float, default=None,
                       help="price spacing; must tile the range evenly")
    group.add_argument("--levels", type=int, default=None,
                       help="number of evenly spaced price levels")


def _add_run_flags(parser, fmt: bool = True) -> None:
    parser.add_argument("--rho", type=float, default=None,
                        help="transmission loss price (default: scenario)")
    parser.add_argument("--out", default="gridcharge_out",
                        help="output directory (default: %(default)s)")
    if fmt:
        parser.add_argument("--format", choices=("csv", "json", "svg"),
                            default="csv", help="report format")
    parser.add_argument("--parallel", type=int, default=1,
                        help="worker processes for the price sweep")
    parser.add_argument(
        "--solver", default=os.environ.get("GRIDCHARGE_SOLVER", "internal"),
        help="solver backend name (default: internal, or GRIDCHARGE_SOLVER)")
    parser.add_argument("--no-es", action="store_true",
                        help="zero every battery before solving")


def _resolve_solver(name: str):
    """Backend object for a --solver value; None means the built-in."""
    if name in (None, "", "internal"):
        return None
    try:
        return resolve_backend({"solver.backend": name})
    except KeyError as exc:
        raise ValidationError("--solver", str(exc)) from exc


def _resolve_grid(scenario, args) -> PriceGrid:
    gmin = scenario.grid.gamma_min if args.gamma_min is None else args.gamma_min
    gmax = scenario.grid.gamma_max if args.gamma_max is None else args.gamma_max
    try:
        if args.dgamma is not None:
            return PriceGrid.from_spacing(gmin, gmax, args.dgamma)
        if args.levels is not None:
            return PriceGrid(gmin, gmax, args.levels)
        if args.gamma_min is None and args.gamma_max is None:
            return scenario.grid
        return PriceGrid(gmin, gmax, scenario.grid.n_levels)
    except ValueError as exc:
        raise ValidationError("--gamma", str(exc)) from exc


def _load(args):
    scenario = load_scenario(args.scenario)
    if getattr(args, "no_es", False):
        scenario = without_storage(scenario)
    return scenario


def _grid_dict(grid: PriceGrid) -> dict:
    return {"gamma_min": grid.gamma_min, "gamma_max": grid.gamma_max,
            "levels": grid.n_levels}


def _manifest_for(args, command: str, grid=None, rho=None,
                  seed=None) -> RunManifest:
    return RunManifest(
        command=command,
        scenario=getattr(args, "scenario", None),
        price_grid=None if grid is None else _grid_dict(grid),
        rho=rho,
        seed=seed,
        out=str(args.out),
        solver=args.solver,
        parallel=getattr(args, "parallel", 1),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    scenario = generate_scenario(args.template, args.seed,
                                 es_enabled=not args.no_es)
    out = args.out
    if out is None:
        suffix = "" if not args.no_es else "_noes"
        out = f"{args.template}_seed{args.seed}{suffix}.json"
    try:
        dump_scenario(scenario, out)
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from exc
    log.info("wrote %s", out)
    print(out)
    return 0


def cmd_distances(args) -> int:
    scenario = load_scenario(args.scenario)
    d = scenario.network.distances
    for row in d:
        print(" ".join(f"{v:.6g}" for v in row))
    if args.csv:
        text = "\n".join(",".join(f"{v:.6g}" for v in row)
                         for row in d) + "\n"
        write_text(Path(args.csv), text)
        log.info("wrote %s", args.csv)
    return 0


def cmd_sweep(args) -> int:
    scenario = _load(args)
    grid = _resolve_grid(scenario, args)
    rho = scenario.rho if args.rho is None else args.rho
    backend = _resolve_solver(args.solver)
    sweep = sweep_prices(scenario, grid, rho, workers=args.parallel,
                         backend=backend)
    out = Path(args.out)
    write_text(out / "sweep.csv", sweep_csv_text(sweep))
    write_text(out / "sweep.svg", sweep_svg(sweep))
    write_manifest(_manifest_for(args, "sweep", grid, rho), out)
    log.info("wrote sweep.csv, sweep.svg, manifest.json to %s", out)
    best = sweep.argmax_index
    print(f"gamma_L = {_opt(sweep.gamma_lower)}")
    print(f"gamma_opt = {_opt(None if best is None else sweep[best].gamma)}")
    print(f"gamma_U = {_opt(sweep.gamma_upper)}")
    return 0


def _opt(value) -> str:
    return "none" if value is None else f"{value:.6g}"


def cmd_equilibrium(args) -> int:
    scenario = _load(args)
    grid = _resolve_grid(scenario, args)
    rho = scenario.rho if args.rho is None else args.rho
    backend = _resolve_solver(args.solver)
    result = solve_equilibrium(scenario, grid, rho, workers=args.parallel,
                               backend=backend)
    config = MarketConfig("OptimalP2P", es_enabled=not args.no_es)
    rows = [(config, result.metrics)]
    out = Path(args.out)
    emit_report(rows, out, "csv")
    if args.format != "csv":
        sweep = SweepResult(levels=result.levels,
                            gamma_lower=result.gamma_lower,
                            gamma_upper=result.gamma_upper)
        labels = [p.prosumer_id for p in scenario.fleet.prosumers]
        emit_report(rows, out, args.format, sweep=sweep,
                    trade_matrix=result.response.trade_matrix(),
                    trade_labels=labels)
    write_manifest(_manifest_for(args, "equilibrium", grid, rho), out)
    log.info("wrote report and manifest.json to %s", out)
    print(f"gamma_star = {result.gamma_star:.6g}")
    print(report_csv_text(rows), end="")
    return 0


def cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    backend = _resolve_solver(args.solver)
    rho = scenario.rho if args.rho is None else args.rho
    if args.rho is not None:
        from dataclasses import replace
        scenario = replace(scenario, rho=args.rho)
    results = []
    optimal_es = None
    for name in MARKET_NAMES:
        for es_enabled in (False, True):
            config = MarketConfig(name, es_enabled=es_enabled)
            log.info("evaluating %s", config.label)
            outcome = evaluate_market(scenario, config,
                                      workers=args.parallel, backend=backend)
            results.append((config, outcome.metrics))
            if name == "OptimalP2P" and es_enabled:
                optimal_es = outcome
    _check_dominance(results)
    out = Path(args.out)
    emit_report(results, out, "csv")
    if args.format == "json":
        emit_report(results, out, "json")
    elif args.format == "svg" and optimal_es is not None:
        labels = [p.prosumer_id for p in scenario.fleet.prosumers]
        emit_report(results, out, "svg",
                    trade_matrix=optimal_es.response.trade_matrix(),
                    trade_labels=labels)
    write_manifest(_manifest_for(args, "compare", scenario.grid, rho), out)
    log.info("wrote report and manifest.json to %s", out)
    print(report_csv_text(results), end="")
    return 0


def _check_dominance(results) -> None:
    """The welfare-maximal market must top every row's social profit;
    anything else means a solver returned a suboptimal dispatch."""
    by_key = {(cfg.name, cfg.es_enabled): m.social_profit
              for cfg, m in results}
    for es_enabled in (False, True):
        social = by_key.get(("SocialP2P", es_enabled))
        if social is None:
            continue
        for (name, es), value in by_key.items():
            if es != es_enabled:
                continue
            tol = 1e-6 * (1.0 + abs(social))
            if value > social + tol:
                raise NumericalBreakdown(
                    f"{name} social profit {value} exceeds the welfare "
                    f"optimum {social} (es_enabled={es_enabled})")


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcharge",
        description="Network-charge design for peer-to-peer energy trading")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate",
                       help="write a deterministic synthetic scenario")
    p.add_argument("template", help="bus template, e.g. ieee9")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-es", action="store_true",
                   help="generate the zero-storage variant")
    p.add_argument("--out", default=None,
                   help="output file (default: TEMPLATE_seedSEED.json)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("distances",
                       help="print the electrical distance matrix")
    p.add_argument("scenario")
    p.add_argument("--csv", default=None, help="also write the matrix as CSV")
    p.set_defaults(func=cmd_distances)

    p = sub.add_parser("sweep", help="evaluate every candidate price level")
    p.add_argument("scenario")
    _add_grid_flags(p)
    _add_run_flags(p, fmt=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("equilibrium",
                       help="solve for the operator's optimal price")
    p.add_argument("scenario")
    _add_grid_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("compare",
                       help="run the four market presets with and without "
                            "storage")
    p.add_argument("scenario")
    _add_run_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        log.error("%s", exc)
        return 2
    except AllLevelsInfeasible as exc:
        log.error("%s", exc)
        return 3
    except (SingularMatrix, NumericalBreakdown) as exc:
        log.error("numerical failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
