"""Minimal SVG 1.1 scatter plot for the (K/K_W, E/E_W) phase plane."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = {
    "global_proxy": "#1f77b4",
    "blowup_detected": "#d62728",
    "undecided": "#7f7f7f",
    "error": "#000000",
}


def _nice_ticks(lo, hi, n=5):
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    x = start
    while x <= hi + 1e-12 * span:
        ticks.append(round(x, 12))
        x += step
    return ticks


def _num(x):
    return f"{x:.2f}"


def phase_scatter(points, width=480, height=400, title="phase plane"):
    """points: iterable of dicts with K_over_KW, E_over_EW, observed, agree.

    The threshold lines x = 1 and y = 1 are always drawn.  Agreeing points are
    filled, disagreeing ones hollow.
    """
    pts = [p for p in points if _finite(p.get("K_over_KW")) and _finite(p.get("E_over_EW"))]
    xs = [p["K_over_KW"] for p in pts] + [0.0, 1.0]
    ys = [p["E_over_EW"] for p in pts] + [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    padx = 0.08 * (x1 - x0 or 1.0)
    pady = 0.08 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady

    ml, mr, mt, mb = 60, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def X(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def Y(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _nice_ticks(x0, x1):
        out.append(f'<line x1="{_num(X(t))}" y1="{mt + ph}" x2="{_num(X(t))}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(X(t))}" y="{mt + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        out.append(f'<line x1="{ml - 5}" y1="{_num(Y(t))}" x2="{ml}" y2="{_num(Y(t))}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{_num(Y(t) + 3)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{t:g}</text>')
    out.append(f'<line id="threshold-K" x1="{_num(X(1.0))}" y1="{mt}" x2="{_num(X(1.0))}" y2="{mt + ph}" stroke="#444" '
               f'stroke-dasharray="5,4"/>')
    out.append(f'<line id="threshold-E" x1="{ml}" y1="{_num(Y(1.0))}" x2="{ml + pw}" y2="{_num(Y(1.0))}" stroke="#444" '
               f'stroke-dasharray="5,4"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">K / K_W</text>')
    out.append(f'<text x="15" y="{mt + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 15 {mt + ph / 2:.1f})">E / E_W</text>')
    for p in pts:
        color = COLORS.get(p.get("observed"), "#7f7f7f")
        fill = color if p.get("agree") else "none"
        out.append(f'<circle cx="{_num(X(p["K_over_KW"]))}" cy="{_num(Y(p["E_over_EW"]))}" r="4" '
                   f'fill="{fill}" stroke="{color}" stroke-width="1.5"/>')
    ly = mt + 12
    for name, color in COLORS.items():
        out.append(f'<circle cx="{ml + pw - 110}" cy="{ly - 4}" r="4" fill="{color}"/>')
        out.append(f'<text x="{ml + pw - 100}" y="{ly}" font-family="sans-serif" font-size="10">{name}</text>')
        ly += 14
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _finite(x):
    return isinstance(x, (int, float)) and math.isfinite(x)
