"""Plain-text SVG figures: MI curves per estimator and cluster-center
trajectories on the sphere (Lambert azimuthal equal-area projection).

Output is a pure function of the inputs: coordinates are printed with a fixed
precision and elements are emitted in input order.
"""

from __future__ import annotations

import math
from html import escape

import numpy as np

from .metrics import MITrace

ESTIMATOR_COLUMNS = (("mi_cos_dv", "cos-DV"), ("mi_infonce", "InfoNCE"), ("mi_jsd", "JSD"))
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")

PANEL_W, PANEL_H, MARGIN = 300, 220, 40


def _num(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if v != 0 else "0"


def _polyline(points, color: str, label: str) -> str:
    pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
    return f'<polyline data-label="{escape(label)}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def _scale(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def mi_plot_svg(traces: dict[str, list[MITrace]]) -> str:
    """One panel per estimator, one polyline per (estimator, trace)."""
    if not traces:
        raise ValueError("need at least one trace")
    width = MARGIN + len(ESTIMATOR_COLUMNS) * (PANEL_W + MARGIN)
    height = PANEL_H + 2 * MARGIN + 16 * len(traces)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">']
    epochs = [r.epoch for rows in traces.values() for r in rows]
    sx_lo, sx_hi = min(epochs), max(epochs)
    for p, (column, title) in enumerate(ESTIMATOR_COLUMNS):
        x0 = MARGIN + p * (PANEL_W + MARGIN)
        values = [getattr(r, column) for rows in traces.values() for r in rows if getattr(r, column) is not None]
        lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
        sx = _scale(sx_lo, sx_hi, x0, x0 + PANEL_W)
        sy = _scale(lo, hi, MARGIN + PANEL_H, MARGIN)
        out.append(f'<rect x="{x0}" y="{MARGIN}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>')
        out.append(f'<text x="{x0 + PANEL_W / 2:.1f}" y="{MARGIN - 12}" text-anchor="middle" '
                   f'font-size="13">{title}</text>')
        out.append(f'<text x="{x0}" y="{MARGIN + PANEL_H + 14}" font-size="10">epoch {sx_lo}</text>')
        out.append(f'<text x="{x0 + PANEL_W}" y="{MARGIN + PANEL_H + 14}" text-anchor="end" '
                   f'font-size="10">{sx_hi}</text>')
        out.append(f'<text x="{x0 - 4}" y="{MARGIN + 10}" text-anchor="end" font-size="10">{_num(hi)}</text>')
        out.append(f'<text x="{x0 - 4}" y="{MARGIN + PANEL_H}" text-anchor="end" font-size="10">{_num(lo)}</text>')
        for i, (name, rows) in enumerate(traces.items()):
            pts = [(sx(r.epoch), sy(getattr(r, column))) for r in rows if getattr(r, column) is not None]
            out.append(_polyline(pts, PALETTE[i % len(PALETTE)], f"{name}:{column}"))
    for i, name in enumerate(traces):
        y = MARGIN + PANEL_H + 34 + 16 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<text x="{MARGIN}" y="{y}" font-size="11" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _lambert(z: np.ndarray) -> tuple[float, float]:
    # equal-area projection about the +z pole; the -z pole maps to the rim of radius 2
    x, y, w = (float(v) for v in z)
    k = math.sqrt(2.0 / (1.0 + w)) if w > -1.0 + 1e-12 else 0.0
    return (k * x, k * y) if k else (2.0, 0.0)


def trajectory_svg(trajectory: dict[int, np.ndarray], size: int = 360) -> str:
    """Paths of each cluster center over epochs, projected onto a disc of radius 2."""
    if not trajectory:
        raise ValueError("empty trajectory")
    epochs = sorted(trajectory)
    k = len(trajectory[epochs[0]])
    half = size / 2

    def to_px(u, v):
        return half + u / 2.0 * (half - 10), half - v / 2.0 * (half - 10)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
           f'<circle cx="{_num(half)}" cy="{_num(half)}" r="{_num(half - 10)}" fill="none" stroke="#999"/>']
    for c in range(k):
        color = PALETTE[c % len(PALETTE)]
        pts = [to_px(*_lambert(trajectory[e][c])) for e in epochs]
        out.append(_polyline(pts, color, f"cluster {c}"))
        x, y = pts[-1]
        out.append(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="4" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
