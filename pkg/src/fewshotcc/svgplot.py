"""Minimal hand-emitted SVG charts.

Plots are static, deterministic, and dependency-free so they can be diffed
byte-for-byte in tests. Two chart types cover the pipeline's needs: line
charts with error bars (median error vs. inner updates) and scatter plots
(gain corrections in [r/g, b/g] space, colored by task bin).
"""

from __future__ import annotations

import math

WIDTH = 640
HEIGHT = 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 24, 36, 52

PALETTE = (
    "#d62728",  # warm bin red
    "#1f77b4",  # cold bin blue
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw_step = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw_step))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mag * mult
        if step >= raw_step:
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks or [lo, hi]


class _Frame:
    """Maps data coordinates into the plot viewport."""

    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            yhi = ylo + 1.0
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def x(self, v: float) -> float:
        span = WIDTH - MARGIN_L - MARGIN_R
        return MARGIN_L + (v - self.xlo) / (self.xhi - self.xlo) * span

    def y(self, v: float) -> float:
        span = HEIGHT - MARGIN_T - MARGIN_B
        return HEIGHT - MARGIN_B - (v - self.ylo) / (self.yhi - self.ylo) * span


def _axes(frame: _Frame, title: str, xlabel: str, ylabel: str) -> list:
    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{WIDTH - MARGIN_L - MARGIN_R}" '
        f'height="{HEIGHT - MARGIN_T - MARGIN_B}" fill="none" stroke="#444" stroke-width="1"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN_T - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {HEIGHT / 2})">{ylabel}</text>',
    ]
    for t in _ticks(frame.xlo, frame.xhi):
        px = frame.x(t)
        parts.append(
            f'<line x1="{_fmt(px)}" y1="{HEIGHT - MARGIN_B}" x2="{_fmt(px)}" '
            f'y2="{HEIGHT - MARGIN_B + 5}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{_fmt(px)}" y="{HEIGHT - MARGIN_B + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
        )
    for t in _ticks(frame.ylo, frame.yhi):
        py = frame.y(t)
        parts.append(
            f'<line x1="{MARGIN_L - 5}" y1="{_fmt(py)}" x2="{MARGIN_L}" y2="{_fmt(py)}" stroke="#444"/>'
        )
        parts.append(
            f'<text x="{MARGIN_L - 8}" y="{_fmt(py + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
        )
    return parts


def _document(parts: list) -> str:
    body = "\n".join(parts)
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>\n'
        f"{body}\n</svg>\n"
    )


def line_chart(series: list, title: str, xlabel: str, ylabel: str) -> str:
    """Line chart with optional error bars.

    ``series`` is a list of dicts: name, xs, ys, optional err (one-sigma bar
    half-heights per point).
    """
    if not series:
        raise ValueError("line_chart needs at least one series")
    xs_all = [x for s in series for x in s["xs"]]
    ys_all = [
        y + e
        for s in series
        for y, e in zip(s["ys"], s.get("err") or [0.0] * len(s["ys"]))
    ] + [
        max(0.0, y - e)
        for s in series
        for y, e in zip(s["ys"], s.get("err") or [0.0] * len(s["ys"]))
    ]
    frame = _Frame(min(xs_all), max(xs_all), min(ys_all + [0.0]), max(ys_all))
    parts = _axes(frame, title, xlabel, ylabel)
    for si, s in enumerate(series):
        color = PALETTE[si % len(PALETTE)]
        points = " ".join(f"{_fmt(frame.x(x))},{_fmt(frame.y(y))}" for x, y in zip(s["xs"], s["ys"]))
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        err = s.get("err")
        for i, (x, y) in enumerate(zip(s["xs"], s["ys"])):
            px, py = frame.x(x), frame.y(y)
            parts.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="2.6" fill="{color}"/>')
            if err is not None and err[i] > 0:
                lo, hi = frame.y(max(0.0, y - err[i])), frame.y(y + err[i])
                parts.append(
                    f'<line x1="{_fmt(px)}" y1="{_fmt(lo)}" x2="{_fmt(px)}" y2="{_fmt(hi)}" '
                    f'stroke="{color}" stroke-width="1.2"/>'
                )
        parts.append(
            f'<text x="{WIDTH - MARGIN_R - 6}" y="{MARGIN_T + 16 + 14 * si}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{s["name"]}</text>'
        )
    return _document(parts)


def scatter_chart(groups: list, title: str, xlabel: str, ylabel: str) -> str:
    """Scatter plot of point groups, one palette color per group."""
    if not groups:
        raise ValueError("scatter_chart needs at least one group")
    xs_all = [x for g in groups for x in g["xs"]]
    ys_all = [y for g in groups for y in g["ys"]]
    pad_x = 0.05 * (max(xs_all) - min(xs_all) or 1.0)
    pad_y = 0.05 * (max(ys_all) - min(ys_all) or 1.0)
    frame = _Frame(min(xs_all) - pad_x, max(xs_all) + pad_x, min(ys_all) - pad_y, max(ys_all) + pad_y)
    parts = _axes(frame, title, xlabel, ylabel)
    for gi, g in enumerate(groups):
        color = PALETTE[gi % len(PALETTE)]
        for x, y in zip(g["xs"], g["ys"]):
            parts.append(
                f'<circle cx="{_fmt(frame.x(x))}" cy="{_fmt(frame.y(y))}" r="3" '
                f'fill="{color}" fill-opacity="0.75"/>'
            )
        parts.append(
            f'<text x="{WIDTH - MARGIN_R - 6}" y="{MARGIN_T + 16 + 14 * gi}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{g["name"]}</text>'
        )
    return _document(parts)
