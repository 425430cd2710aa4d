"""Static SVG line charts for training logs.

Output is plain SVG 1.1 text built by hand, with fixed number formatting so
the same log always yields the same bytes.
"""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 140, "top": 40, "bottom": 48}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def tag_colors(names) -> dict:
    """Colour per tag name, stable for a given legend order."""
    return {name: PALETTE[i % len(PALETTE)] for i, name in enumerate(names)}


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _label(v) -> str:
    return f"{v:g}"


def line_chart(series, title, xlabel, ylabel, y_range=None) -> str:
    """``series`` is a list of ``(name, xs, ys, color)``; NaNs break a line."""
    if not series:
        raise ValidationError("nothing to plot")
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series])
    ok = np.isfinite(xs_all) & np.isfinite(ys_all)
    if not ok.any():
        raise ValidationError("no finite points to plot")
    x0, x1 = float(xs_all[ok].min()), float(xs_all[ok].max())
    if y_range is None:
        y0, y1 = float(ys_all[ok].min()), float(ys_all[ok].max())
    else:
        y0, y1 = y_range
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]

    def px(x):
        return L + (x - x0) / (x1 - x0) * (R - L)

    def py(y):
        return B - (y - y0) / (y1 - y0) * (B - T)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(title)}</text>',
        f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{B}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_num(px(t))}" y1="{B}" x2="{_num(px(t))}" y2="{B + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(px(t))}" y="{B + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{_label(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{L - 5}" y1="{_num(py(t))}" x2="{R}" y2="{_num(py(t))}" stroke="#dddddd"/>')
        out.append(f'<text x="{L - 8}" y="{_num(py(t) + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{_label(t)}</text>')
    out.append(f'<text x="{(L + R) / 2:.0f}" y="{HEIGHT - 10}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(T + B) / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {(T + B) / 2:.0f})">{escape(ylabel)}</text>')
    for k, (name, xs, ys, color) in enumerate(series):
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        good = np.isfinite(xs) & np.isfinite(ys)
        runs, cur = [], []
        for x, y, g in zip(xs, ys, good):
            if g:
                cur.append((x, y))
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        for run in runs:
            if len(run) == 1:
                x, y = run[0]
                out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="3" fill="{color}"/>')
            else:
                pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in run)
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = T + 16 * k + 8
        out.append(f'<line x1="{R + 12}" y1="{ly}" x2="{R + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{R + 38}" y="{ly + 4}" font-family="sans-serif" font-size="11">'
                   f'{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def accuracy_chart(log) -> str:
    steps = log.column("step")
    return line_chart([("test accuracy", steps, log.column("test_acc"), PALETTE[0])],
                      "Test accuracy", "training step", "accuracy", y_range=(0.0, 1.0))


def weight_chart(log, use_batches=False) -> str:
    """Mean weight per tag against step; one series per tag in the legend.

    By default the eval rows are used (weights over the whole train set);
    per-batch rows leave gaps wherever a tag is missing from a batch.
    """
    rows = log.batch_rows if use_batches and log.batch_rows else log.rows
    col = log.batch_column if rows is log.batch_rows else log.column
    steps = col("step")
    colors = tag_colors(log.tag_names)
    series = [(name, steps, col(f"weight_{name}"), colors[name]) for name in log.tag_names]
    ys = np.concatenate([s[2] for s in series])
    top = float(np.nanmax(ys)) if np.isfinite(ys).any() else 1.0
    # small weights (sparse targets) would hug the axis on a fixed [0, 1] scale
    top = min(1.0, max(top * 1.1, 1e-3))
    return line_chart(series, "Average weight per group", "training step", "mean weight",
                      y_range=(0.0, top))


def export_plots(log, out_dir) -> list:
    """Write ``accuracy.svg`` and, when weights were logged, ``weights.svg``."""
    if not log.rows:
        raise ValidationError("log has no rows to plot")
    os.makedirs(out_dir, exist_ok=True)
    charts = [("accuracy.svg", accuracy_chart(log))]
    has_weights = any(r.get(f"weight_{n}") is not None for r in log.rows + log.batch_rows
                      for n in log.tag_names)
    if has_weights:
        charts.append(("weights.svg", weight_chart(log)))
    paths = []
    for name, text in charts:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths
