"""Minimal SVG line plots (time series and log-scale distances)."""

from __future__ import annotations

from html import escape

import numpy as np

__all__ = ["line_plot"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
_W, _H = 720, 420
_ML, _MR, _MT, _MB = 70, 150, 40, 50


def _thin(x, y, limit):
    if len(x) <= limit:
        return x, y
    idx = np.linspace(0, len(x) - 1, limit).astype(int)
    return x[idx], y[idx]


def _ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def line_plot(series, path, title: str = "", xlabel: str = "t", ylabel: str = "", logy: bool = False,
              config: dict | None = None, max_points: int = 2000) -> None:
    """Write ``series`` (list of ``(x, y, label)``) as an SVG line chart.

    With ``logy`` the y values are plotted as ``log10``; non-positive values
    are dropped.
    """
    prepared = []
    for k, (x, y, label) in enumerate(series):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if logy:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        keep = np.isfinite(x) & np.isfinite(y)
        x, y = _thin(x[keep], y[keep], max_points)
        prepared.append((x, y, label, _COLORS[k % len(_COLORS)]))
    xs = np.concatenate([p[0] for p in prepared]) if prepared else np.array([0.0, 1.0])
    ys = np.concatenate([p[1] for p in prepared]) if prepared else np.array([0.0, 1.0])
    if xs.size == 0:
        xs, ys = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(v):
        return _ML + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _MT + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">']
    if config:
        body = "; ".join(f"{k}={config[k]}" for k in sorted(config)).replace("--", "- -")
        out.append(f"<!-- {escape(body)} -->")
    out.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>')
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{sx(v):.2f}" y1="{_MT + ph}" x2="{sx(v):.2f}" y2="{_MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.2f}" y="{_MT + ph + 18}" font-size="11" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        label = f"1e{v:.1f}" if logy else f"{v:.3g}"
        out.append(f'<line x1="{_ML - 5}" y1="{sy(v):.2f}" x2="{_ML}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{sy(v) + 4:.2f}" font-size="11" text-anchor="end">{label}</text>')
    out.append(f'<text x="{_W / 2:.0f}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{_ML + pw / 2:.0f}" y="{_H - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    ylab = f"log10 {ylabel}" if logy else ylabel
    out.append(
        f'<text x="16" y="{_MT + ph / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + ph / 2:.0f})">{escape(ylab)}</text>'
    )
    for k, (x, y, label, color) in enumerate(prepared):
        if len(x):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = _MT + 14 + 18 * k
        out.append(f'<line x1="{_W - _MR + 10}" y1="{ly}" x2="{_W - _MR + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _MR + 35}" y="{ly + 4}" font-size="11">{escape(str(label))}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
