# Native SVG scatter plots for 2-D problems
"""
tools.plot_tool

Writes an SVG overlaying exact-posterior draws, method samples and the
observation constraint {x : a_i . x = y_i} for each measurement row.
Only circle, line, rect and text primitives are used.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from core.errors import DomainError
from tools.operator_tool import MeasurementOp

logger = logging.getLogger(__name__)

TRUTH_COLOR = "#9e9e9e"
SAMPLE_COLOR = "#1f77b4"
CONSTRAINT_COLOR = "#d62728"


def _bounds(points: np.ndarray, pad: float = 0.08) -> Tuple[float, float, float, float]:
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    lo, hi = lo - pad * span, hi + pad * span
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def _constraint_segment(
    a: np.ndarray, value: float, box: Tuple[float, float, float, float]
) -> Optional[Tuple[float, float, float, float]]:
    """End points of a . x = value across the box, or None when a is zero."""
    x0, x1, y0, y1 = box
    if abs(a[1]) >= abs(a[0]):
        if a[1] == 0.0:
            return None
        return x0, (value - a[0] * x0) / a[1], x1, (value - a[0] * x1) / a[1]
    return (value - a[1] * y0) / a[0], y0, (value - a[1] * y1) / a[0], y1


def scatter_svg(
    truth: np.ndarray,
    samples: np.ndarray,
    op: Optional[MeasurementOp] = None,
    y: Optional[np.ndarray] = None,
    title: str = "",
    size: int = 480,
) -> str:
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if truth.shape[1] != 2 or samples.shape[1] != 2:
        raise DomainError("scatter plots need 2-D points")

    box = _bounds(np.vstack([truth, samples]))
    x0, x1, y0, y1 = box
    margin = 30

    def px(x: float) -> float:
        return margin + (x - x0) / (x1 - x0) * (size - 2 * margin)

    def py(v: float) -> float:
        return size - margin - (v - y0) / (y1 - y0) * (size - 2 * margin)

    parts: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        '<defs><clipPath id="plot"><rect x="{m}" y="{m}" width="{w}" height="{w}"/></clipPath></defs>'.format(
            m=margin, w=size - 2 * margin
        ),
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{size - 2 * margin}" height="{size - 2 * margin}" '
        'fill="none" stroke="#444" stroke-width="1"/>',
        '<g clip-path="url(#plot)">',
    ]
    for p in truth:
        parts.append(f'<circle cx="{px(p[0]):.2f}" cy="{py(p[1]):.2f}" r="2" fill="{TRUTH_COLOR}" fill-opacity="0.5"/>')
    for p in samples:
        parts.append(f'<circle cx="{px(p[0]):.2f}" cy="{py(p[1]):.2f}" r="3" fill="{SAMPLE_COLOR}" fill-opacity="0.8"/>')
    if op is not None and y is not None:
        rows = op.matrix()
        for a, value in zip(rows, np.atleast_1d(np.asarray(y, dtype=float))):
            seg = _constraint_segment(a, float(value), box)
            if seg is None:
                continue
            parts.append(
                f'<line x1="{px(seg[0]):.2f}" y1="{py(seg[1]):.2f}" x2="{px(seg[2]):.2f}" y2="{py(seg[3]):.2f}" '
                f'stroke="{CONSTRAINT_COLOR}" stroke-width="1.5" stroke-dasharray="6,4"/>'
            )
    parts.append("</g>")
    if title:
        parts.append(f'<text x="{margin}" y="{margin - 10}" font-family="sans-serif" font-size="13">{title}</text>')
    parts.append(
        f'<text x="{margin}" y="{size - 8}" font-family="sans-serif" font-size="11">'
        f'<tspan fill="{TRUTH_COLOR}">exact posterior</tspan>  '
        f'<tspan fill="{SAMPLE_COLOR}">samples</tspan>  '
        f'<tspan fill="{CONSTRAINT_COLOR}">observation</tspan></text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_scatter(path: Union[str, Path], truth: np.ndarray, samples: np.ndarray, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scatter_svg(truth, samples, **kwargs), encoding="utf-8")
    logger.debug("Saved scatter plot to %s", path)
    return path
