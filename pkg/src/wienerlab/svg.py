"""Self-contained SVG line charts (no plotting library needed)."""
from __future__ import annotations

import math
from pathlib import Path
from typing import List, Sequence, Tuple
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

Series = Tuple[str, Sequence[float], Sequence[float]]


def line_chart(path: str | Path, series: List[Series], title: str = "", xlabel: str = "",
               ylabel: str = "", logx: bool = False, logy: bool = False,
               width: int = 560, height: int = 380) -> Path:
    """Write a line chart of ``(label, xs, ys)`` series; non-finite or
    non-positive (on log axes) points are dropped."""
    left, right, top, bottom = 70, 20, 30, 50
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    ty = (lambda v: math.log10(v)) if logy else (lambda v: v)
    clean = []
    for label, xs, ys in series:
        pts = []
        for x, y in zip(xs, ys):
            x, y = float(x), float(y)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            if (logx and x <= 0) or (logy and y <= 0):
                continue
            pts.append((tx(x), ty(y)))
        clean.append((label, pts))
    allpts = [p for _, pts in clean for p in pts] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
    y0, y1 = min(p[1] for p in allpts), max(p[1] for p in allpts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        xt = f"1e{xv:.2g}" if logx else f"{xv:.3g}"
        yt = f"1e{yv:.2g}" if logy else f"{yv:.3g}"
        out.append(f'<text x="{sx(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xt}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yt}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    for i, (label, pts) in enumerate(clean):
        color = COLORS[i % len(COLORS)]
        if pts:
            d = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>')
            out += [f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" fill="{color}"/>' for x, y in pts]
        out.append(f'<text x="{left + 8}" y="{top + 16 + 14 * i}" fill="{color}">{escape(label)}</text>')
    out.append("</svg>\n")
    path = Path(path)
    path.write_text("\n".join(out))
    return path
