"""Tiny dependency-free SVG line charts for metrics CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import FormatError

_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")

DEFAULT_COLUMNS = ("miou", "loss_ce", "loss_copt", "loss_m", "loss_st")


def read_metrics(csv_path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "iter" not in reader.fieldnames:
            raise FormatError(f"{csv_path}: not a metrics CSV (no 'iter' column)")
        rows = list(reader)
    if not rows:
        raise FormatError(f"{csv_path}: no data rows")
    return list(reader.fieldnames), rows


def plot_csv(csv_path: str | Path, out_svg: str | Path,
             columns: tuple[str, ...] = DEFAULT_COLUMNS,
             width: int = 720, height: int = 420) -> Path:
    """One polyline per requested metric column, each min-max normalized to
    share the canvas; iteration on the x axis."""
    fields, rows = read_metrics(csv_path)
    columns = tuple(c for c in columns if c in fields)
    if not columns:
        raise FormatError(f"{csv_path}: none of the requested columns present")

    xs = [float(r["iter"]) for r in rows]
    x_lo, x_hi = min(xs), max(xs)
    span_x = (x_hi - x_lo) or 1.0
    margin, legend_h = 45, 18 * len(columns)

    def sx(x: float) -> float:
        return margin + (x - x_lo) / span_x * (width - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + legend_h}" '
        f'viewBox="0 0 {width} {height + legend_h}">',
        f'<rect x="0" y="0" width="{width}" height="{height + legend_h}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 8}" font-size="12" text-anchor="middle">iteration '
        f'({x_lo:g} .. {x_hi:g})</text>',
    ]

    for k, col in enumerate(columns):
        vals = []
        for r in rows:
            try:
                vals.append(float(r[col]))
            except ValueError:
                vals.append(float("nan"))
        finite = [v for v in vals if v == v]
        lo = min(finite) if finite else 0.0
        hi = max(finite) if finite else 1.0
        span = (hi - lo) or 1.0
        pts = " ".join(
            f"{sx(x):.2f},{margin + (1 - (v - lo) / span) * (height - 2 * margin):.2f}"
            for x, v in zip(xs, vals) if v == v
        )
        color = _COLORS[k % len(_COLORS)]
        if pts:
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = height + 14 + 18 * k
        parts.append(f'<rect x="{margin}" y="{ly - 9}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{margin + 18}" y="{ly + 1}" font-size="12">{col} '
                     f'[{lo:.6g} .. {hi:.6g}]</text>')

    parts.append("</svg>")
    out = Path(out_svg)
    out.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return out
