"""Report emission: comparison tables, sweep exports, and SVG figures.

Every numeric cell is rendered with ``%.6g`` (six significant digits) in
both CSV and JSON, so the two formats carry exactly equal values and the
files stay byte-deterministic.  Columns the welfare-maximal market
internalizes (network charge, grid profit) render as ``--`` in CSV and
``null`` in JSON.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoError

REPORT_COLUMNS = (
    "market",
    "transmission_loss",
    "network_charge",
    "grid_profit",
    "prosumer_profit",
    "total_transaction_kwh",
    "social_profit",
)

SWEEP_COLUMNS = (
    "level",
    "gamma",
    "feasible",
    "tie_break",
    "lp_value",
    "grid_profit",
    "network_charge_revenue",
    "transmission_loss_cost",
    "prosumer_profit",
    "total_utility",
    "social_profit",
    "z_volume",
    "total_transaction_kwh",
    "curtailment_kwh",
    "reason",
)

MASKED = "--"


def sig6(value) -> float | None:
    """Value rounded to six significant digits, the report precision."""
    if value is None:
        return None
    return float(f"{float(value):.6g}")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def write_text(path: Path, text: str) -> Path:
    """Write a report artifact, wrapping failures in IoError."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def report_rows(results) -> list[dict]:
    """Comparison-table rows for (MarketConfig, MarketMetrics) pairs.

    The welfare-maximal market keeps charge and grid profit unset (they
    are internal transfers it never levies).
    """
    rows = []
    for config, metrics in results:
        masked = config.name == "SocialP2P"
        rows.append({
            "market": config.label,
            "transmission_loss": sig6(metrics.transmission_loss_cost),
            "network_charge": None if masked
            else sig6(metrics.network_charge_revenue),
            "grid_profit": None if masked else sig6(metrics.grid_profit),
            "prosumer_profit": sig6(metrics.prosumer_profit),
            "total_transaction_kwh": sig6(metrics.total_transaction_kwh),
            "social_profit": sig6(metrics.social_profit),
        })
    return rows


def report_csv_text(results) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in report_rows(results):
        cells = []
        for col in REPORT_COLUMNS:
            value = row[col]
            if col != "market" and value is None:
                cells.append(MASKED)
            else:
                cells.append(_cell(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _flow_detail(metrics) -> dict | None:
    flow = metrics.flow
    if flow is None:
        return None
    return {
        "bus_injections": _round_matrix(flow.injections),
        "line_flows": _round_matrix(flow.flows),
        "loss": sig6(flow.loss),
        "violations": [[int(line), int(t), sig6(excess)]
                       for line, t, excess in flow.violations],
    }


def _round_matrix(arr) -> list:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return [[sig6(v) for v in row] for row in a]


def report_json_document(results) -> dict:
    rows = report_rows(results)
    detail = []
    for (config, metrics), row in zip(results, rows):
        detail.append({
            "market": config.label,
            "name": config.name,
            "es_enabled": config.es_enabled,
            "gamma": sig6(metrics.gamma),
            "network_charge_revenue": row["network_charge"],
            "transmission_loss_cost": row["transmission_loss"],
            "grid_profit": row["grid_profit"],
            "prosumer_profit": row["prosumer_profit"],
            "total_utility": sig6(metrics.total_utility),
            "social_profit": row["social_profit"],
            "z_volume": sig6(metrics.z_volume),
            "total_transaction_kwh": row["total_transaction_kwh"],
            "curtailment_kwh": sig6(metrics.curtailment_kwh),
            "per_period": _flow_detail(metrics),
        })
    return {"schema": 1, "columns": list(REPORT_COLUMNS), "rows": rows,
            "detail": detail}


def sweep_csv_text(sweep) -> str:
    """Per-level table of a price sweep (one row per grid level)."""
    lines = [",".join(SWEEP_COLUMNS)]
    for record in sweep:
        row = record.as_dict()
        lines.append(",".join(_cell(row.get(col)) for col in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


def emit_report(results, out_dir, fmt: str = "csv", *, sweep=None,
                trade_matrix=None, trade_labels=None,
                basename: str = "report") -> list[Path]:
    """Write the comparison report in one format.

    ``csv`` writes the table alone; ``json`` mirrors it with per-period
    flow detail; ``svg`` draws the sweep curve (when a sweep is given)
    and the trade heat map (when a trade matrix is given).
    """
    if fmt not in ("csv", "json", "svg"):
        raise ValueError(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    written = []
    if fmt == "csv":
        written.append(write_text(out / f"{basename}.csv",
                                   report_csv_text(results)))
    elif fmt == "json":
        text = json.dumps(report_json_document(results), indent=2) + "\n"
        written.append(write_text(out / f"{basename}.json", text))
    else:
        if sweep is not None:
            written.append(write_text(out / "sweep.svg", sweep_svg(sweep)))
        if trade_matrix is not None:
            written.append(write_text(
                out / "trades.svg",
                trade_heatmap_svg(trade_matrix, trade_labels)))
        if not written:
            raise ValueError(
                "svg output needs a sweep result or a trade matrix")
    return written


# ---------------------------------------------------------------------------
# hand-rolled SVG figures


def _svg_header(width: int, height: int) -> list:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>']


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def sweep_svg(sweep, width: int = 640, height: int = 400) -> str:
    """Grid profit against the charge price, with the break-even,
    optimal, and trade-free threshold prices marked."""
    levels = [r for r in sweep]
    xs = [r.gamma for r in levels]
    ys = [r.grid_profit if r.grid_profit is not None else 0.0
          for r in levels]
    lo_x, hi_x = min(xs), max(xs)
    lo_y, hi_y = min(ys + [0.0]), max(ys + [0.0])
    if hi_x <= lo_x:
        hi_x = lo_x + 1.0
    if hi_y <= lo_y:
        hi_y = lo_y + 1.0
    pad_y = 0.08 * (hi_y - lo_y)
    lo_y, hi_y = lo_y - pad_y, hi_y + pad_y
    ml, mr, mt, mb = 70, 20, 30, 50

    def px(x):
        return ml + (x - lo_x) / (hi_x - lo_x) * (width - ml - mr)

    def py(y):
        return height - mb - (y - lo_y) / (hi_y - lo_y) * (height - mt - mb)

    parts = _svg_header(width, height)
    parts.append(f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" '
                 f'height="{height - mt - mb}" fill="none" stroke="#888"/>')
    parts.append(f'<line x1="{ml}" y1="{_fmt(py(0.0))}" x2="{width - mr}" '
                 f'y2="{_fmt(py(0.0))}" stroke="#bbb" stroke-dasharray="3,3"/>')
    for k in range(6):
        x = lo_x + k * (hi_x - lo_x) / 5
        y = lo_y + k * (hi_y - lo_y) / 5
        parts.append(f'<text x="{_fmt(px(x))}" y="{height - mb + 18}" '
                     f'font-size="11" text-anchor="middle" '
                     f'fill="#333">{x:.3g}</text>')
        parts.append(f'<text x="{ml - 8}" y="{_fmt(py(y) + 4)}" '
                     f'font-size="11" text-anchor="end" '
                     f'fill="#333">{y:.4g}</text>')
    points = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}"
                      for x, y, r in zip(xs, ys, levels) if r.feasible)
    parts.append(f'<polyline points="{points}" fill="none" '
                 f'stroke="#1f77b4" stroke-width="2"/>')
    for x, y, r in zip(xs, ys, levels):
        color = "#1f77b4" if r.feasible else "#d62728"
        parts.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="2.5" '
                     f'fill="{color}"/>')
    best = sweep.argmax_index if hasattr(sweep, "argmax_index") else None
    markers = []
    if getattr(sweep, "gamma_lower", None) is not None:
        markers.append((sweep.gamma_lower, "#2ca02c", "gamma_L"))
    if best is not None:
        markers.append((levels[best].gamma, "#ff7f0e", "gamma_opt"))
    if getattr(sweep, "gamma_upper", None) is not None:
        markers.append((sweep.gamma_upper, "#9467bd", "gamma_U"))
    for x, color, label in markers:
        parts.append(f'<line x1="{_fmt(px(x))}" y1="{mt}" '
                     f'x2="{_fmt(px(x))}" y2="{height - mb}" '
                     f'stroke="{color}" stroke-dasharray="5,4"/>')
        parts.append(f'<text x="{_fmt(px(x) + 3)}" y="{mt + 14}" '
                     f'font-size="11" fill="{color}">{label}={x:.3g}</text>')
    parts.append(f'<text x="{(ml + width - mr) / 2}" y="{height - 12}" '
                 f'font-size="12" text-anchor="middle" fill="#111">'
                 f'network charge price</text>')
    parts.append(f'<text x="16" y="{(mt + height - mb) / 2}" font-size="12" '
                 f'text-anchor="middle" fill="#111" transform="rotate(-90 16 '
                 f'{(mt + height - mb) / 2})">grid profit</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def trade_heatmap_svg(matrix, labels=None, cell: int = 36) -> str:
    """Buyer-by-seller traded energy as a shaded grid."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if labels is None:
        labels = [str(i + 1) for i in range(n)]
    ml, mt = 70, 50
    width = ml + n * cell + 20
    height = mt + n * cell + 20
    peak = float(m.max()) if m.size and m.max() > 0 else 1.0
    parts = _svg_header(width, height)
    parts.append(f'<text x="{ml + n * cell / 2}" y="20" font-size="12" '
                 f'text-anchor="middle" fill="#111">'
                 f'traded energy [kWh] (buyer row, seller column)</text>')
    for i in range(n):
        parts.append(f'<text x="{ml - 6}" y="{mt + i * cell + cell / 2 + 4}" '
                     f'font-size="11" text-anchor="end" '
                     f'fill="#333">{labels[i]}</text>')
        parts.append(f'<text x="{ml + i * cell + cell / 2}" y="{mt - 6}" '
                     f'font-size="11" text-anchor="middle" '
                     f'fill="#333">{labels[i]}</text>')
        for j in range(n):
            frac = m[i, j] / peak
            shade = int(round(255 - 200 * frac))
            color = f"rgb({shade},{shade},255)" if i != j else "#eee"
            parts.append(
                f'<rect x="{ml + j * cell}" y="{mt + i * cell}" '
                f'width="{cell}" height="{cell}" fill="{color}" '
                f'stroke="#999"/>')
            if i != j and m[i, j] > 0:
                parts.append(
                    f'<text x="{ml + j * cell + cell / 2}" '
                    f'y="{mt + i * cell + cell / 2 + 4}" font-size="9" '
                    f'text-anchor="middle" fill="#111">{m[i, j]:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
