"""Plot data and a minimal static SVG for the two forecasting panels."""
from __future__ import annotations

from typing import Sequence

import numpy as np

PANELS = {
    "bottleneck": ("mlp_bottleneck", "lstm_standard", "gru_standard"),
    "no_bottleneck": ("mlp_linear", "lstm_linear", "gru_linear"),
}
TITLES = {
    "bottleneck": "Models with activation bottleneck",
    "no_bottleneck": "Models without activation bottleneck",
}
_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def panel_rows(models) -> list[tuple]:
    """``(model, t, x_true, x_pred)`` rows for all given trained models."""
    rows = []
    for m in models:
        rows.extend(m.prediction_rows())
    return rows


def csv_text(header: Sequence[str], rows) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(out) + "\n"


def render_svg(title: str, rows, width: int = 480, height: int = 360,
               train_range=(-10.0, 10.0)) -> str:
    """Ground truth vs. predictions against the target value, as a polyline chart."""
    rows = list(rows)
    models = list(dict.fromkeys(r[0] for r in rows))
    xs = np.array([r[2] for r in rows], dtype=float)
    ys = np.array([r[3] for r in rows] + [r[2] for r in rows], dtype=float)
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    y0, y1 = (ys.min(), ys.max()) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    m = 40

    def px(v):
        return m + (v - x0) / (x1 - x0) * (width - 2 * m)

    def py(v):
        return height - m - (v - y0) / (y1 - y0) * (height - 2 * m)

    def poly(points, color, dash=""):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in points)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{extra} points="{pts}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{m / 2 + 5:.1f}" text-anchor="middle" font-size="14">{title}</text>',
    ]
    lo, hi = max(train_range[0], x0), min(train_range[1], x1)
    if hi > lo:
        parts.append(f'<rect x="{px(lo):.2f}" y="{m}" width="{px(hi) - px(lo):.2f}" '
                     f'height="{height - 2 * m}" fill="#eeeeee"/>')
    truth = sorted({(r[2], r[2]) for r in rows})
    parts.append(poly(truth, "black", "4,3"))
    for k, name in enumerate(models):
        pts = [(r[2], r[3]) for r in rows if r[0] == name]
        color = _COLORS[k % len(_COLORS)]
        parts.append(poly(pts, color))
        parts.append(f'<text x="{m + 6}" y="{m + 16 + 14 * k}" font-size="11" fill="{color}">{name}</text>')
    parts.append(f'<text x="{m + 6}" y="{m + 16 + 14 * len(models)}" font-size="11">ground truth (dashed)</text>')
    for v in (x0, x1):
        parts.append(f'<text x="{px(v):.2f}" y="{height - m + 14}" text-anchor="middle" font-size="10">{v:g}</text>')
    for v in (y0, y1):
        parts.append(f'<text x="{m - 4}" y="{py(v) + 3:.2f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
