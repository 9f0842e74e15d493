"""Writers for campaign results: per-replicate CSV, JSON summary, SVG charts.

SVG output is plain markup (polylines and axes); nothing here needs a
plotting library.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .harness import PIPELINES, ROW_FIELDS, ExperimentReport, aggregate_rows
from .testing import PLUS_INF

__all__ = ["rows_to_csv", "read_rows", "summary_dict", "write_report", "svg_lines",
           "fdr_trend_svg", "density_overlay_svg", "artifact_version", "VERSION"]

VERSION = "0.1.0"


def _cell(v) -> str:
    if v is None:
        return ""
    if v is PLUS_INF:
        return "inf"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for row in rows:
        w.writerow([_cell(row.get(k)) for k in ROW_FIELDS])
    return buf.getvalue()


_INT_FIELDS = {"N", "replicate", "K_hat", "n_rejected", "n_signals", "n_false"}
_STR_FIELDS = {"pipeline", "status"}


def _parse(k: str, v: str):
    if v == "":
        return None
    if k in _STR_FIELDS:
        return v
    if k in _INT_FIELDS:
        return int(v)
    if k == "lambda_hat" and v == "inf":
        return PLUS_INF
    return float(v)


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]


def artifact_version(csv_text: str) -> str:
    """Package version tagged with a short content hash of the CSV."""
    return f"{VERSION}+{hashlib.sha1(csv_text.encode()).hexdigest()[:7]}"


def _json_safe(v):
    if v is PLUS_INF or (isinstance(v, float) and math.isinf(v)):
        return "inf"
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def summary_dict(report: ExperimentReport, csv_text: str) -> dict:
    return _json_safe({"version": artifact_version(csv_text), "config": report.config,
                       "lambda_star": report.lambda_star, "aggregates": list(report.aggregates)})


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_report(report: ExperimentReport, out_dir, csv_name: str = "results.csv",
                 json_name: str = "summary.json", svg: bool = True) -> dict[str, Path]:
    """Write CSV, JSON summary and (optionally) the FDR trend chart."""
    out = Path(out_dir)
    text = rows_to_csv(report.rows)
    paths = {"csv": _write(out / csv_name, text),
             "json": _write(out / json_name, json.dumps(summary_dict(report, text), indent=2))}
    if svg and report.rows:
        paths["svg"] = _write(out / "fdr_trend.svg", fdr_trend_svg(report.aggregates,
                                                                   report.config.get("t")))
    return paths


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def svg_lines(series: dict[str, tuple], title: str = "", xlabel: str = "", ylabel: str = "",
              logx: bool = False, hline: float | None = None,
              width: int = 640, height: int = 400) -> str:
    """Line chart of ``{label: (x, y)}`` as an SVG document."""
    pad_l, pad_r, pad_t, pad_b = 64, 150, 36, 48
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    xs = [tx(v) for x, _ in series.values() for v in x]
    ys = [float(v) for _, y in series.values() for v in y if np.isfinite(v)]
    if hline is not None:
        ys.append(hline)
    if not xs or not ys:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    span = y1 - y0 if y1 > y0 else 1.0
    y0, y1 = y0 - 0.05 * span, y1 + 0.05 * span
    W, Hh = width - pad_l - pad_r, height - pad_t - pad_b
    px = lambda v: pad_l + W * (tx(v) - x0) / (x1 - x0)
    py = lambda v: pad_t + Hh * (1 - (v - y0) / (y1 - y0))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
             f'<line x1="{pad_l}" y1="{pad_t + Hh}" x2="{pad_l + W}" y2="{pad_t + Hh}" stroke="black"/>',
             f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + Hh}" stroke="black"/>']
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        parts.append(f'<text x="{pad_l - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    xticks = sorted({v for x, _ in series.values() for v in x})
    if len(xticks) > 8:
        xticks = xticks[:: max(1, len(xticks) // 6)]
    for v in xticks:
        parts.append(f'<text x="{px(v):.1f}" y="{pad_t + Hh + 16}" text-anchor="middle">{v:.3g}</text>')
    parts.append(f'<text x="{pad_l + W / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{pad_t + Hh / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {pad_t + Hh / 2:.1f})">{escape(ylabel)}</text>')
    if hline is not None:
        parts.append(f'<line x1="{pad_l}" y1="{py(hline):.1f}" x2="{pad_l + W}" y2="{py(hline):.1f}" '
                     f'stroke="gray" stroke-dasharray="4 3"/>')
    for i, (label, (x, y)) in enumerate(series.items()):
        colour = _COLOURS[i % len(_COLOURS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.6" points="{pts}"/>')
        ly = pad_t + 16 * i + 8
        parts.append(f'<line x1="{pad_l + W + 12}" y1="{ly}" x2="{pad_l + W + 32}" y2="{ly}" '
                     f'stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{pad_l + W + 38}" y="{ly + 4}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def fdr_trend_svg(aggregates: Sequence[dict], t: float | None = None) -> str:
    series = {}
    for pipe in PIPELINES:
        pts = [(a["N"], a.get("FDR_hat", math.nan)) for a in aggregates if a["pipeline"] == pipe]
        if pts:
            series[pipe] = tuple(zip(*pts))
    return svg_lines(series, "Empirical FDR against N", "N", "FDR", logx=True, hline=t)


def density_overlay_svg(grid, truth: Sequence, estimate: Sequence) -> str:
    """True and estimated densities on a shared grid (callables or evaluated arrays)."""
    grid = np.asarray(grid, dtype=float)
    ev = lambda f: np.asarray(f(grid) if callable(f) else f, dtype=float)
    series = {}
    for j, f in enumerate(truth):
        series[f"true f{j}"] = (grid, ev(f))
    for j, f in enumerate(estimate):
        series[f"estimated f{j}"] = (grid, ev(f))
    return svg_lines(series, "Emission densities", "x", "density")


def report_from_rows(rows: Sequence[dict], config: dict | None = None) -> ExperimentReport:
    rows = tuple(rows)
    return ExperimentReport(config or {}, rows, tuple(aggregate_rows(rows)))
