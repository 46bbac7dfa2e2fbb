"""Minimal deterministic SVG line plots (fixed viewport, fixed decimals)."""

from __future__ import annotations

from typing import Sequence

WIDTH, HEIGHT = 480, 360
MARGIN = 48
PALETTE = ("#c0392b", "#2471a3", "#229954", "#7d3c98", "#d68910", "#5d6d7e")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def line_plot(series: Sequence[tuple], title: str, xlabel: str, ylabel: str,
              xlim: tuple, ylim: tuple = (0.0, 1.0), step: bool = False) -> str:
    """Render ``series`` of ``(label, xs, ys)`` as an SVG document string.

    ``step=True`` draws right-continuous steps (survival curves).
    """
    x0, x1 = xlim
    y0, y1 = ylim
    if x1 <= x0:
        x1 = x0 + 1.0
    pw = WIDTH - 2 * MARGIN
    ph = HEIGHT - 2 * MARGIN

    def px(x):
        return MARGIN + (min(max(x, x0), x1) - x0) / (x1 - x0) * pw

    def py(y):
        return HEIGHT - MARGIN - (min(max(y, y0), y1) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="20.00" text-anchor="middle" font-size="13">{_escape(title)}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(5):
        fx = x0 + (x1 - x0) * k / 4
        fy = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{_fmt(px(fx))}" y="{_fmt(HEIGHT - MARGIN + 14)}" text-anchor="middle">{fx:.4g}</text>')
        out.append(f'<text x="{_fmt(MARGIN - 4)}" y="{_fmt(py(fy) + 4)}" text-anchor="end">{fy:.4g}</text>')
    out.append(f'<text x="{WIDTH / 2:.2f}" y="{HEIGHT - 10:.2f}" text-anchor="middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="12.00" y="{HEIGHT / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 12.00 {HEIGHT / 2:.2f})">{_escape(ylabel)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = []
        prev_y = None
        for x, y in zip(xs, ys):
            if step and prev_y is not None:
                pts.append(f"{_fmt(px(x))},{_fmt(py(prev_y))}")
            pts.append(f"{_fmt(px(x))},{_fmt(py(y))}")
            prev_y = y
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        ly = MARGIN + 14 + 14 * i
        out.append(f'<line x1="{_fmt(WIDTH - MARGIN - 110)}" y1="{_fmt(ly - 4)}" '
                   f'x2="{_fmt(WIDTH - MARGIN - 94)}" y2="{_fmt(ly - 4)}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_fmt(WIDTH - MARGIN - 90)}" y="{_fmt(ly)}">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def km_svg(curves: Sequence[tuple], title: str, horizon: float | None = None) -> str:
    """``curves`` of ``(label, KmCurve)``; each curve starts at (0, 1)."""
    series = []
    xmax = 0.0
    for label, c in curves:
        xs = [0.0] + [float(t) for t in c.time]
        ys = [1.0] + [float(s) for s in c.survival]
        xmax = max(xmax, xs[-1])
        series.append((label, xs, ys))
    xmax = horizon if horizon is not None else xmax
    ymin = min(min(s[2]) for s in series) if series else 0.0
    ylo = max(0.0, min(0.9, (int(ymin * 10) / 10.0)))
    return line_plot(series, title, "days", "event-free survival", (0.0, xmax), (ylo, 1.0), step=True)


def roc_svg(curves: Sequence[tuple], title: str) -> str:
    """``curves`` of ``(label, RocCurve)``."""
    series = [(f"{label} (AUC {c.auc:.3f})", list(c.fpr), list(c.tpr)) for label, c in curves]
    series.append(("chance", [0.0, 1.0], [0.0, 1.0]))
    return line_plot(series, title, "false positive rate", "true positive rate", (0.0, 1.0))
