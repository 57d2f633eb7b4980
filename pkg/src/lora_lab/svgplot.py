"""Minimal standalone SVG line charts with linear or logarithmic axes.

Output depends only on the data: coordinates are printed with fixed
precision and elements are emitted in input order, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    label: str
    xs: Sequence[float]
    ys: Sequence[float]
    color: Optional[str] = None
    dashed: bool = False
    markers: bool = True


@dataclass
class Panel:
    title: str
    series: list = field(default_factory=list)
    xlabel: str = ""
    ylabel: str = ""
    xscale: str = "log2"  # "linear", "log2" or "log10"
    yscale: str = "log2"


def _tf(scale: str):
    if scale == "linear":
        return lambda v: v
    base = 2.0 if scale == "log2" else 10.0
    return lambda v: math.log(v, base)


def _usable(scale: str, v: float) -> bool:
    return math.isfinite(v) and (scale == "linear" or v > 0)


def _ticks(lo: float, hi: float, scale: str):
    """Tick positions in transformed space with their labels."""
    if scale == "linear":
        span = hi - lo or 1.0
        step = 10 ** math.floor(math.log10(span / 5))
        for m in (1, 2, 5, 10):
            if span / (step * m) <= 6:
                step *= m
                break
        start = math.ceil(lo / step) * step
        out = []
        k = 0
        while start + k * step <= hi + 1e-12:
            v = start + k * step
            out.append((v, f"{v:g}"))
            k += 1
        return out
    base = "2" if scale == "log2" else "10"
    first, last = math.ceil(lo - 1e-9), math.floor(hi + 1e-9)
    stride = max(1, math.ceil((last - first + 1) / 8))
    return [(float(e), f"{base}^{e}") for e in range(first, last + 1, stride)]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render(panels: Sequence[Panel], title: str = "", panel_w: int = 420, panel_h: int = 320) -> str:
    """SVG document with ``panels`` laid out side by side."""
    ml, mr, mt, mb = 64, 150, 40, 50
    head = 30 if title else 0
    width = panel_w * len(panels)
    height = panel_h + head
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for p_idx, panel in enumerate(panels):
        ox, oy = p_idx * panel_w, head
        pw, ph = panel_w - ml - mr, panel_h - mt - mb
        fx, fy = _tf(panel.xscale), _tf(panel.yscale)
        pts = [
            (fx(x), fy(y))
            for s in panel.series
            for x, y in zip(s.xs, s.ys)
            if _usable(panel.xscale, x) and _usable(panel.yscale, y)
        ]
        if not pts:
            out.append(f'<text x="{ox + panel_w / 2:.1f}" y="{oy + panel_h / 2:.1f}" text-anchor="middle">no data</text>')
            continue
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad = 0.05 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

        def sx(v):
            return ox + ml + (v - x0) / (x1 - x0) * pw

        def sy(v):
            return oy + mt + ph - (v - y0) / (y1 - y0) * ph

        out.append(f'<g class="panel" id="panel{p_idx}">')
        out.append(
            f'<text x="{ox + ml + pw / 2:.1f}" y="{oy + mt - 12:.1f}" text-anchor="middle" font-size="12">{escape(panel.title)}</text>'
        )
        out.append(
            f'<rect x="{ox + ml}" y="{oy + mt}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>'
        )
        for v, lab in _ticks(x0, x1, panel.xscale):
            X = sx(v)
            out.append(f'<line x1="{_fmt(X)}" y1="{oy + mt + ph}" x2="{_fmt(X)}" y2="{oy + mt + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{_fmt(X)}" y="{oy + mt + ph + 16}" text-anchor="middle">{escape(lab)}</text>')
        for v, lab in _ticks(y0, y1, panel.yscale):
            Y = sy(v)
            out.append(f'<line x1="{ox + ml - 4}" y1="{_fmt(Y)}" x2="{ox + ml}" y2="{_fmt(Y)}" stroke="black"/>')
            out.append(f'<line x1="{ox + ml}" y1="{_fmt(Y)}" x2="{ox + ml + pw}" y2="{_fmt(Y)}" stroke="#e0e0e0"/>')
            out.append(f'<text x="{ox + ml - 6}" y="{_fmt(Y + 4)}" text-anchor="end">{escape(lab)}</text>')
        if panel.xlabel:
            out.append(
                f'<text x="{ox + ml + pw / 2:.1f}" y="{oy + panel_h - 12}" text-anchor="middle">{escape(panel.xlabel)}</text>'
            )
        if panel.ylabel:
            cx, cy = ox + 14, oy + mt + ph / 2
            out.append(
                f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 {cx} {cy:.1f})">{escape(panel.ylabel)}</text>'
            )
        for s_idx, s in enumerate(panel.series):
            color = s.color or PALETTE[s_idx % len(PALETTE)]
            coords = [
                (sx(fx(x)), sy(fy(y)))
                for x, y in zip(s.xs, s.ys)
                if _usable(panel.xscale, x) and _usable(panel.yscale, y)
            ]
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            if len(coords) > 1:
                path = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in coords)
                out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            if s.markers:
                for a, b in coords:
                    out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="2.5" fill="{color}"/>')
            ly = oy + mt + 8 + 16 * s_idx
            lx = ox + ml + pw + 10
            out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
            out.append(f'<text x="{lx + 22}" y="{ly + 4}">{escape(s.label)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
