"""Tiny SVG emitters for the eval CLI (scatter and strip plots)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _scale(vals, lo, hi, out_lo, out_hi):
    vals = np.asarray(vals, dtype=np.float64)
    span = hi - lo
    if span <= 0:
        return np.full(vals.shape, (out_lo + out_hi) / 2.0)
    return out_lo + (vals - lo) / span * (out_hi - out_lo)


def scatter_svg(path, coords, labels, title: str = ""):
    """2D scatter with one color per label; writes an SVG file."""
    coords = np.asarray(coords, dtype=np.float64)
    w, h, m = 480, 360, 30
    xs = _scale(coords[:, 0], coords[:, 0].min(), coords[:, 0].max(), m, w - m)
    ys = _scale(coords[:, 1], coords[:, 1].min(), coords[:, 1].max(), h - m, m)
    uniq = sorted(set(labels))
    color = {lab: _COLORS[i % len(_COLORS)] for i, lab in enumerate(uniq)}
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>']
    if title:
        parts.append(f'<text x="{w // 2}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    for x, y, lab in zip(xs, ys, labels):
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3.5" fill="{color[lab]}" fill-opacity="0.75"/>')
    for i, lab in enumerate(uniq):
        parts.append(f'<circle cx="{m}" cy="{m + 14 * i}" r="4" fill="{color[lab]}"/>')
        parts.append(f'<text x="{m + 8}" y="{m + 14 * i + 4}" font-size="11">{lab}</text>')
    parts.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def strip_svg(path, values, labels, title: str = ""):
    """1D strip plot (one row per label) for e.g. widths per author."""
    values = [float(v) for v in values]
    uniq = sorted(set(labels))
    w, h, m = 480, 40 + 24 * len(uniq), 80
    lo, hi = min(values), max(values)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>']
    if title:
        parts.append(f'<text x="{w // 2}" y="16" text-anchor="middle" font-size="13">{title}</text>')
    for i, lab in enumerate(uniq):
        y = 40 + 24 * i
        parts.append(f'<text x="6" y="{y + 4}" font-size="11">{lab}</text>')
        parts.append(f'<line x1="{m}" y1="{y}" x2="{w - 20}" y2="{y}" stroke="#ddd"/>')
        for v, vl in zip(values, labels):
            if vl != lab:
                continue
            x = _scale([v], lo, hi, m, w - 20)[0]
            parts.append(f'<circle cx="{x:.1f}" cy="{y}" r="4" fill="{_COLORS[i % len(_COLORS)]}" fill-opacity="0.8"/>')
    parts.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(parts), encoding="utf-8")
