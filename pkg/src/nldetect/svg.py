"""Minimal deterministic SVG figures: line plots, scatter with trend lines, heatmaps.

Output depends only on the data, so re-rendering identical inputs yields
identical files.
"""

from __future__ import annotations

import math
from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
_VIRIDIS = ((68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37))

W_PANEL, H_PANEL = 420, 300
MARGIN = dict(left=64, right=16, top=32, bottom=48)


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".") if math.isfinite(v) else "0"


def nice_ticks(lo, hi, n=5):
    """Round tick positions covering ``[lo, hi]`` with 1-2-5 steps."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0, 1.0]
    if hi <= lo:
        pad = abs(lo) * 0.1 or 1.0
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(ticks[-1] + step, 12))
    return ticks


def _tick_label(v):
    if v == 0:
        return "0"
    a = abs(v)
    if a >= 1e4 or a < 1e-3:
        return f"{v:.1e}"
    return f"{v:.6g}"


class _Panel:
    def __init__(self, x0, y0, xlim, ylim, title="", xlabel="", ylabel="", w=W_PANEL, h=H_PANEL):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xt = nice_ticks(*xlim)
        self.yt = nice_ticks(*ylim)
        self.xlim = (self.xt[0], self.xt[-1])
        self.ylim = (self.yt[0], self.yt[-1])
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.parts = []

    @property
    def inner(self):
        left = self.x0 + MARGIN["left"]
        top = self.y0 + MARGIN["top"]
        return left, top, self.w - MARGIN["left"] - MARGIN["right"], self.h - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x):
        left, _, iw, _ = self.inner
        return left + (x - self.xlim[0]) / ((self.xlim[1] - self.xlim[0]) or 1.0) * iw

    def py(self, y):
        _, top, _, ih = self.inner
        return top + ih - (y - self.ylim[0]) / ((self.ylim[1] - self.ylim[0]) or 1.0) * ih

    def axes(self):
        left, top, iw, ih = self.inner
        out = [f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(iw)}" height="{_fmt(ih)}" '
               f'fill="none" stroke="#333"/>']
        for t in self.xt:
            x = self.px(t)
            out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(top + ih)}" x2="{_fmt(x)}" y2="{_fmt(top + ih + 4)}" '
                       f'stroke="#333"/>')
            out.append(f'<text x="{_fmt(x)}" y="{_fmt(top + ih + 16)}" text-anchor="middle">'
                       f'{_tick_label(t)}</text>')
        for t in self.yt:
            y = self.py(t)
            out.append(f'<line x1="{_fmt(left - 4)}" y1="{_fmt(y)}" x2="{_fmt(left)}" y2="{_fmt(y)}" stroke="#333"/>')
            out.append(f'<text x="{_fmt(left - 6)}" y="{_fmt(y + 4)}" text-anchor="end">{_tick_label(t)}</text>')
        if self.title:
            out.append(f'<text x="{_fmt(left + iw / 2)}" y="{_fmt(self.y0 + 18)}" text-anchor="middle" '
                       f'font-weight="bold">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_fmt(left + iw / 2)}" y="{_fmt(top + ih + 36)}" text-anchor="middle">'
                       f'{escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = self.x0 + 14, top + ih / 2
            out.append(f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" text-anchor="middle" '
                       f'transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">{escape(self.ylabel)}</text>')
        return out + self.parts

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys)
                       if math.isfinite(x) and math.isfinite(y))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def markers(self, xs, ys, color, r=2.0, opacity=0.35):
        for x, y in zip(xs, ys):
            if math.isfinite(x) and math.isfinite(y):
                self.parts.append(f'<circle cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" r="{r}" '
                                  f'fill="{color}" fill-opacity="{opacity}"/>')

    def legend(self, entries):
        left, top, iw, _ = self.inner
        for i, (label, color) in enumerate(entries):
            y = top + 12 + 14 * i
            x = left + iw - 120
            self.parts.append(f'<line x1="{_fmt(x)}" y1="{_fmt(y - 4)}" x2="{_fmt(x + 16)}" y2="{_fmt(y - 4)}" '
                              f'stroke="{color}" stroke-width="2"/>')
            self.parts.append(f'<text x="{_fmt(x + 20)}" y="{_fmt(y)}">{escape(label)}</text>')


def _document(width, height, body):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n')
    return head + "\n".join(body) + "\n</svg>\n"


def _limits(values):
    arr = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if arr.size == 0:
        return 0.0, 1.0
    return float(arr.min()), float(arr.max())


def line_plot(curves, title="", xlabel="", ylabel=""):
    """``curves`` is a list of ``(label, xs, ys)``."""
    xs_all = [x for _, xs, _ in curves for x in xs]
    ys_all = [y for _, _, ys in curves for y in ys]
    ylo, yhi = _limits(ys_all)
    p = _Panel(0, 0, _limits(xs_all), (min(ylo, 0.0), yhi), title, xlabel, ylabel, w=560, h=360)
    entries = []
    for i, (label, xs, ys) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        p.polyline(xs, ys, color)
        entries.append((label, color))
    if len(curves) > 1:
        p.legend(entries[:12])
    return _document(560, 360, p.axes())


def detection_figure(levels, scatter, means, rel_variation, kind, per_dof=None):
    """Two panels: scores per damage level with the trend of means, and the
    relative variation of the trend statistic.

    ``scatter`` is a list of ``(level, score)``; ``per_dof`` optionally maps a
    DOF to its list of per-level means.
    """
    lv_pct = [100 * lv for lv in levels]
    score_name = "reconstruction MAE" if kind == "ae" else "discriminator output"
    ys = [s for _, s in scatter] + list(means)
    left = _Panel(0, 0, (min(lv_pct), max(lv_pct)), _limits(ys), f"{kind.upper()} scores",
                  "damage level (%)", score_name)
    for dof, dmeans in sorted((per_dof or {}).items()):
        left.polyline(lv_pct, dmeans, PALETTE[(dof + 2) % len(PALETTE)], width=1.0, dash="4 3")
    left.markers([100 * lv for lv, _ in scatter], [s for _, s in scatter], PALETTE[0])
    left.polyline(lv_pct, means, PALETTE[1], width=2.0)
    entries = [("mean", PALETTE[1])] + [(f"mean, DOF {d + 1}", PALETTE[(d + 2) % len(PALETTE)])
                                        for d in sorted(per_dof or {})]
    left.legend(entries)
    rv = [100 * r for r in rel_variation]
    ylabel = "relative variation of mean (%)" if kind == "ae" else "relative variation of damage index (%)"
    right = _Panel(W_PANEL, 0, (min(lv_pct), max(lv_pct)), (min(min(rv), 0.0), max(max(rv), 1.0)),
                   "relative variation", "damage level (%)", ylabel)
    right.polyline(lv_pct, rv, PALETTE[2], width=2.0)
    right.markers(lv_pct, rv, PALETTE[2], r=3.0, opacity=1.0)
    return _document(2 * W_PANEL, H_PANEL, left.axes() + right.axes())


def _colormap(t):
    t = min(max(t, 0.0), 1.0) * (len(_VIRIDIS) - 1)
    i = min(int(t), len(_VIRIDIS) - 2)
    f = t - i
    a, b = _VIRIDIS[i], _VIRIDIS[i + 1]
    return "#" + "".join(f"{round(a[k] + f * (b[k] - a[k])):02x}" for k in range(3))


def heatmap(grid, xs, ys, title="", xlabel="", ylabel="", max_cols=200):
    """Rectangular heatmap of ``grid[len(ys), len(xs)]``; columns are
    max-pooled down to at most ``max_cols``."""
    grid = np.asarray(grid, dtype=float)
    xs = np.asarray(xs, dtype=float)
    if grid.shape[1] > max_cols:
        step = -(-grid.shape[1] // max_cols)
        n = grid.shape[1] // step
        grid = grid[:, : n * step].reshape(grid.shape[0], n, step).max(axis=2)
        xs = xs[: n * step : step]
    p = _Panel(0, 0, (float(xs[0]), float(xs[-1])), (float(ys[0]), float(ys[-1])), title, xlabel, ylabel,
               w=560, h=360)
    p.xlim = (float(xs[0]), float(xs[-1]))
    p.ylim = (float(ys[0]), float(ys[-1]))
    p.xt = [t for t in p.xt if p.xlim[0] <= t <= p.xlim[1]] or [p.xlim[0]]
    p.yt = [t for t in p.yt if p.ylim[0] <= t <= p.ylim[1]] or [p.ylim[0]]
    left, top, iw, ih = p.inner
    vmax = float(grid.max()) or 1.0
    cw = iw / grid.shape[1]
    ch = ih / grid.shape[0]
    cells = []
    for i in range(grid.shape[0]):
        y = top + ih - (i + 1) * ch
        for j in range(grid.shape[1]):
            cells.append(f'<rect x="{_fmt(left + j * cw)}" y="{_fmt(y)}" width="{_fmt(cw + 0.3)}" '
                         f'height="{_fmt(ch + 0.3)}" fill="{_colormap(grid[i, j] / vmax)}"/>')
    return _document(560, 360, cells + p.axes())
