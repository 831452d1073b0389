"""Run reports: one JSON document per run plus hand-rolled SVG line charts
(no plotting dependency, byte-deterministic output)."""

from __future__ import annotations

import json
from pathlib import Path


def write_report(path: str | Path, config: dict, metrics: dict,
                 runtime_s: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config": config, "metrics": metrics, "runtime_s": runtime_s}
    try:
        path.write_text(json.dumps(doc, sort_keys=True, indent=1))
    except OSError as exc:
        raise OSError(f"failed writing report {path}: {exc}") from exc
    return path


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(series: dict[str, list[tuple[float, float]]], path: str | Path,
                   title: str = "", x_label: str = "", y_label: str = "",
                   size: tuple[int, int] = (480, 320)) -> Path:
    """Write a minimal SVG line chart; one polyline per named series."""
    width, height = size
    ml, mr, mt, mb = 50, 16, 28, 40
    pw, ph = width - ml - mr, height - mt - mb

    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(max(ys), 1e-9)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{ml}" y1="{mt+ph}" x2="{ml+pw}" y2="{mt+ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt+ph}" stroke="black"/>',
        f'<text x="{ml+pw/2:.1f}" y="{height-8}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="14" y="{mt+ph/2:.1f}" font-size="11" transform="rotate(-90 14 {mt+ph/2:.1f})" '
        f'text-anchor="middle">{y_label}</text>',
    ]
    for t in (x0, x1):
        parts.append(f'<text x="{sx(t):.1f}" y="{mt+ph+14}" text-anchor="middle" '
                     f'font-size="10">{t:.2g}</text>')
    for t in (y0, y1):
        parts.append(f'<text x="{ml-6}" y="{sy(t)+3:.1f}" text-anchor="end" '
                     f'font-size="10">{t:.2g}</text>')

    for i, (name, pts) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{ml+pw-4}" y="{mt+14+i*14}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
    return path
