"""Minimal SVG line charts, written by hand so output bytes are fully determined by the data."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 50


def _scale(values, log):
    vals = [math.log10(v) for v in values] if log else list(values)
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return vals, lo, hi


def _ticks(lo, hi, log, count=5):
    if log:
        first, last = math.floor(lo), math.ceil(hi)
        return [(float(e), f"1e{e}") for e in range(first, last + 1) if lo - 1e-9 <= e <= hi + 1e-9]
    step = (hi - lo) / (count - 1)
    return [(lo + j * step, f"{lo + j * step:.3g}") for j in range(count)]


def line_chart(series, title: str, xlabel: str, ylabel: str, logx: bool = False, logy: bool = False) -> str:
    """``series`` is a list of ``(label, xs, ys)``; points with non-positive values are dropped on log axes."""
    cleaned = []
    for label, xs, ys in series:
        pts = [(x, y) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)]
        if pts:
            cleaned.append((label, pts))
    if not cleaned:
        raise ValueError("nothing to plot")
    _, xlo, xhi = _scale([x for _, p in cleaned for x, _ in p], logx)
    _, ylo, yhi = _scale([y for _, p in cleaned for _, y in p], logy)
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        v = math.log10(x) if logx else x
        return LEFT + pw * (v - xlo) / (xhi - xlo)

    def py(y):
        v = math.log10(y) if logy else y
        return TOP + ph * (1 - (v - ylo) / (yhi - ylo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v, text in _ticks(xlo, xhi, logx):
        x = LEFT + pw * (v - xlo) / (xhi - xlo)
        out.append(f'<line x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{text}</text>')
    for v, text in _ticks(ylo, yhi, logy):
        y = TOP + ph * (1 - (v - ylo) / (yhi - ylo))
        out.append(f'<line x1="{LEFT - 5}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.2f}" text-anchor="end">{text}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">{escape(ylabel)}</text>')
    for j, (label, pts) in enumerate(cleaned):
        color = PALETTE[j % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if len(pts) <= 40:
            out += [f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{color}"/>' for x, y in pts]
        ly = TOP + 14 + 18 * j
        out.append(f'<line x1="{W - RIGHT + 10}" y1="{ly}" x2="{W - RIGHT + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 35}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
