"""Dependency-free deterministic SVG line/scatter plots.

Numbers are formatted with fixed precision so identical inputs always emit
byte-identical files. Good enough for training curves, deployment paths,
and scatter diagnostics; not a plotting library.
"""

from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 56
PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f",
)


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        lo, hi = 0.0, 1.0
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    raw = np.linspace(lo, hi, n)
    return raw


class SvgFigure:
    def __init__(self, title="", xlabel="", ylabel=""):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.series = []  # (kind, xs, ys, color, label)

    def line(self, xs, ys, color=None, label=""):
        self.series.append(("line", np.asarray(xs, float), np.asarray(ys, float), color, label))

    def scatter(self, xs, ys, color=None, label="", colors=None):
        self.series.append(
            ("scatter", np.asarray(xs, float), np.asarray(ys, float), color if colors is None else colors, label)
        )

    def _extent(self):
        xs = [s[1] for s in self.series if s[1].size]
        ys = [s[2] for s in self.series if s[2].size]
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        ax = np.concatenate(xs)
        ay = np.concatenate(ys)
        ax = ax[np.isfinite(ax)]
        ay = ay[np.isfinite(ay)]
        if ax.size == 0:
            return 0.0, 1.0, 0.0, 1.0
        x0, x1 = float(ax.min()), float(ax.max())
        y0, y1 = float(ay.min()), float(ay.max())
        if x0 == x1:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y0 == y1:
            y0, y1 = y0 - 0.5, y1 + 0.5
        padx, pady = 0.04 * (x1 - x0), 0.04 * (y1 - y0)
        return x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def render(self):
        x0, x1, y0, y1 = self._extent()
        iw, ih = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

        def px(v):
            return MARGIN + (v - x0) / (x1 - x0) * iw

        def py(v):
            return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * ih

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<rect x="{MARGIN}" y="{MARGIN}" width="{iw}" height="{ih}" '
            'fill="none" stroke="#333" stroke-width="1"/>',
        ]
        for tx in _ticks(x0, x1):
            parts.append(
                f'<line x1="{_fmt(px(tx))}" y1="{HEIGHT - MARGIN}" x2="{_fmt(px(tx))}" '
                f'y2="{HEIGHT - MARGIN + 5}" stroke="#333"/>'
            )
            parts.append(
                f'<text x="{_fmt(px(tx))}" y="{HEIGHT - MARGIN + 18}" font-size="11" '
                f'text-anchor="middle" font-family="monospace">{tx:.3g}</text>'
            )
        for ty in _ticks(y0, y1):
            parts.append(
                f'<line x1="{MARGIN - 5}" y1="{_fmt(py(ty))}" x2="{MARGIN}" '
                f'y2="{_fmt(py(ty))}" stroke="#333"/>'
            )
            parts.append(
                f'<text x="{MARGIN - 8}" y="{_fmt(py(ty) + 4)}" font-size="11" '
                f'text-anchor="end" font-family="monospace">{ty:.3g}</text>'
            )
        if self.title:
            parts.append(
                f'<text x="{WIDTH // 2}" y="{MARGIN - 16}" font-size="14" '
                f'text-anchor="middle" font-family="monospace">{self.title}</text>'
            )
        if self.xlabel:
            parts.append(
                f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" font-size="12" '
                f'text-anchor="middle" font-family="monospace">{self.xlabel}</text>'
            )
        if self.ylabel:
            parts.append(
                f'<text x="16" y="{HEIGHT // 2}" font-size="12" text-anchor="middle" '
                f'font-family="monospace" transform="rotate(-90 16 {HEIGHT // 2})">'
                f"{self.ylabel}</text>"
            )
        for si, (kind, xs, ys, color, label) in enumerate(self.series):
            base = PALETTE[si % len(PALETTE)]
            ok = np.isfinite(xs) & np.isfinite(ys)
            if kind == "line":
                pts = " ".join(
                    f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs[ok], ys[ok])
                )
                c = color or base
                parts.append(
                    f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>'
                )
            else:
                if isinstance(color, (list, tuple, np.ndarray)) and not isinstance(color, str):
                    cols = list(color)
                else:
                    cols = [color or base] * len(xs)
                for x, y, c in zip(xs[ok], ys[ok], np.asarray(cols)[ok]):
                    parts.append(
                        f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="2.5" fill="{c}"/>'
                    )
            if label:
                ly = MARGIN + 16 + 16 * si
                c = (color if isinstance(color, str) else None) or base
                parts.append(
                    f'<rect x="{WIDTH - MARGIN - 130}" y="{ly - 9}" width="10" height="10" fill="{c}"/>'
                )
                parts.append(
                    f'<text x="{WIDTH - MARGIN - 116}" y="{ly}" font-size="11" '
                    f'font-family="monospace">{label}</text>'
                )
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.render())
        return path


def cost_color(values):
    """Map cost values to a blue(low)-red(high) hex ramp, NaN-safe."""
    v = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(v)
    out = np.empty(len(v), dtype=object)
    if finite.any():
        lo, hi = v[finite].min(), v[finite].max()
        span = (hi - lo) or 1.0
        for i in range(len(v)):
            if finite[i]:
                t = (v[i] - lo) / span
                r = int(round(40 + 200 * t))
                b = int(round(240 - 200 * t))
                out[i] = f"#{r:02x}50{b:02x}"
            else:
                out[i] = "#999999"
    else:
        out[:] = "#999999"
    return out
