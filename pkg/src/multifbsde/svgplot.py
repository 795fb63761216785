"""Minimal deterministic SVG line plots.

Hand-rolled on purpose: identical inputs must produce byte-identical
files, so no plotting library (whose output embeds ids, dates or version
strings) is used.  One ``<polyline>`` per series, fixed palette, linear or
log axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ParameterDomainError

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 36, 50  # margins


@dataclass
class Series:
    label: str
    xs: list
    ys: list
    marker: bool = field(default=False)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _check_positive(series, axis: str):
    for s in series:
        vals = s.xs if axis == "x" else s.ys
        for i, v in enumerate(vals):
            if v <= 0:
                raise ParameterDomainError(
                    f"log-scale {axis} axis: series {s.label!r} row {i} has "
                    f"nonpositive value {v}"
                )


def _ticks(lo: float, hi: float, log: bool):
    if log:
        lo_e = math.floor(math.log10(lo))
        hi_e = math.ceil(math.log10(hi))
        step = max(1, (hi_e - lo_e) // 6)
        return [10.0**e for e in range(lo_e, hi_e + 1, step)]
    if hi == lo:
        return [lo]
    span = hi - lo
    raw = span / 5
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * span:
        out.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return out


def line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "",
              logx: bool = False, logy: bool = False) -> str:
    """Render series as an SVG 1.1 document string."""
    series = [s if isinstance(s, Series) else Series(*s) for s in series]
    if not series or any(len(s.xs) != len(s.ys) or not s.xs for s in series):
        raise ParameterDomainError("every series needs equally many x and y values")
    if logx:
        _check_positive(series, "x")
    if logy:
        _check_positive(series, "y")

    fx = math.log10 if logx else float
    fy = math.log10 if logy else float
    all_x = [fx(v) for s in series for v in s.xs]
    all_y = [fy(v) for s in series for v in s.ys]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    def px(v):
        return _ML + (fx(v) - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(v):
        return _H - _MB - (fy(v) - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" '
        f'height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
    ]
    # axes
    out.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
               'stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
               'stroke="black" stroke-width="1"/>')
    for t in _ticks(10.0**x_lo if logx else x_lo, 10.0**x_hi if logx else x_hi, logx):
        x = px(t)
        if x < _ML - 0.5 or x > _W - _MR + 0.5:
            continue
        out.append(f'<line x1="{x:.2f}" y1="{_H - _MB}" x2="{x:.2f}" y2="{_H - _MB + 5}" '
                   'stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{x:.2f}" y="{_H - _MB + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    for t in _ticks(10.0**y_lo if logy else y_lo, 10.0**y_hi if logy else y_hi, logy):
        y = py(t)
        if y < _MT - 0.5 or y > _H - _MB + 0.5:
            continue
        out.append(f'<line x1="{_ML - 5}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" '
                   'stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    out.append(f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    out.append(f'<text x="16" y="{(_MT + _H - _MB) // 2}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {(_MT + _H - _MB) // 2})">{ylabel}</text>')
    # data
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.3f},{py(y):.3f}" for x, y in zip(s.xs, s.ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="1.5"/>')
        if s.marker:
            for x, y in zip(s.xs, s.ys):
                out.append(f'<circle cx="{px(x):.3f}" cy="{py(y):.3f}" r="3" '
                           f'fill="{color}"/>')
        ly = _MT + 14 + 16 * i
        out.append(f'<line x1="{_W - _MR - 130}" y1="{ly - 4}" x2="{_W - _MR - 110}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_W - _MR - 104}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{s.label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_plot(path, series, **kwargs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(line_plot(series, **kwargs))
