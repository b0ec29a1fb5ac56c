"""Dependency-free SVG rendering of risk-coverage curves.

Output is a standalone vector file: axes over coverage 0..1, one polyline
per curve, and a legend carrying each curve's name with its area under the
curve x1000. All coordinates are formatted with fixed precision, so the
bytes are a pure function of the inputs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .metrics import RCCurve

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 24, 28, 52

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
           "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def curve_aurc(curve: RCCurve) -> float:
    """Area under the curve as the coverage-increment weighted mean risk.

    The coverage increments are exactly the tie-group masses, so this equals
    the per-sample mean selective risk the evaluation reports.
    """
    increments = np.diff(np.concatenate([[0.0], curve.coverages]))
    return float(np.sum(curve.risks * increments))


def _x(c: float) -> float:
    return MARGIN_L + c * (WIDTH - MARGIN_L - MARGIN_R)


def _y(r: float, ymax: float) -> float:
    return HEIGHT - MARGIN_B - (r / ymax) * (HEIGHT - MARGIN_T - MARGIN_B)


def render_rc_svg(curves: Sequence[tuple[str, RCCurve]], out_path,
                  title: str = "") -> str:
    """Write the SVG file and return its text."""
    if not curves:
        raise ConfigError("render_rc_svg needs at least one curve")
    ymax = max(float(np.max(c.risks)) for _, c in curves)
    ymax = max(ymax * 1.08, 0.01)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13">{title}</text>')

    # axes
    x0, y0 = _x(0.0), _y(0.0, ymax)
    x1, y1 = _x(1.0), _y(ymax, ymax)
    parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}" '
                 f'stroke="black" stroke-width="1"/>')
    parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{y1:.2f}" '
                 f'stroke="black" stroke-width="1"/>')
    for i in range(6):
        c = i / 5.0
        xt = _x(c)
        parts.append(f'<line x1="{xt:.2f}" y1="{y0:.2f}" x2="{xt:.2f}" y2="{y0 + 5:.2f}" '
                     f'stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{xt:.2f}" y="{y0 + 18:.2f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{c:.1f}</text>')
        r = ymax * i / 5.0
        yt = _y(r, ymax)
        parts.append(f'<line x1="{x0 - 5:.2f}" y1="{yt:.2f}" x2="{x0:.2f}" y2="{yt:.2f}" '
                     f'stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{x0 - 8:.2f}" y="{yt + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{r:.3g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">coverage</text>')
    parts.append(f'<text x="16" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">selective risk</text>')

    for k, (name, curve) in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_x(c):.2f},{_y(r, ymax):.2f}"
                       for c, r in zip(curve.coverages, curve.risks))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.8"/>')
        if len(curve.coverages) == 1:
            parts.append(f'<circle cx="{_x(curve.coverages[0]):.2f}" '
                         f'cy="{_y(curve.risks[0], ymax):.2f}" r="3" fill="{color}"/>')
        ly = MARGIN_T + 16 + 16 * k
        parts.append(f'<line x1="{x1 - 150:.2f}" y1="{ly - 4}" x2="{x1 - 128:.2f}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x1 - 122:.2f}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{name} ({curve_aurc(curve) * 1000.0:.1f})</text>')

    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if out_path is not None:
        Path(out_path).write_text(text)
    return text
