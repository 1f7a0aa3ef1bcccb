"""Minimal SVG writer for task-wise curves and score histograms.

Output depends only on the input numbers, so identical data gives
identical bytes. Coordinates are printed with two decimals.
"""

from xml.sax.saxutils import escape

import numpy as np

from .errors import InputError

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=56, right=132, top=32, bottom=44)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _f(v):
    return f"{v:.2f}"


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


class _Canvas:
    def __init__(self, title, xlabel, ylabel, xlim, ylim):
        self.parts = []
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">'
        )
        self.parts.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
        self.parts.append(
            f'<text x="{_f(MARGIN["left"] + self.pw / 2)}" y="18" text-anchor="middle" '
            f'font-size="13">{escape(title)}</text>'
        )
        self._axes(xlabel, ylabel)

    def px(self, x):
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y):
        return MARGIN["top"] + self.ph - (y - self.y0) / (self.y1 - self.y0) * self.ph

    def _axes(self, xlabel, ylabel):
        left, top = MARGIN["left"], MARGIN["top"]
        bottom = top + self.ph
        self.parts.append(
            f'<rect x="{left}" y="{top}" width="{self.pw}" height="{self.ph}" '
            'fill="none" stroke="black"/>'
        )
        for v in _nice_ticks(self.x0, self.x1):
            x = self.px(v)
            self.parts.append(f'<line x1="{_f(x)}" y1="{bottom}" x2="{_f(x)}" y2="{bottom + 4}" stroke="black"/>')
            self.parts.append(f'<text x="{_f(x)}" y="{bottom + 16}" text-anchor="middle">{v:.3g}</text>')
        for v in _nice_ticks(self.y0, self.y1):
            y = self.py(v)
            self.parts.append(f'<line x1="{left - 4}" y1="{_f(y)}" x2="{left}" y2="{_f(y)}" stroke="black"/>')
            self.parts.append(f'<text x="{left - 6}" y="{_f(y + 4)}" text-anchor="end">{v:.3g}</text>')
        self.parts.append(
            f'<text x="{_f(left + self.pw / 2)}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>'
        )
        cy = top + self.ph / 2
        self.parts.append(
            f'<text x="14" y="{_f(cy)}" text-anchor="middle" '
            f'transform="rotate(-90 14 {_f(cy)})">{escape(ylabel)}</text>'
        )

    def legend(self, names):
        x = WIDTH - MARGIN["right"] + 10
        for i, name in enumerate(names):
            y = MARGIN["top"] + 10 + 16 * i
            color = PALETTE[i % len(PALETTE)]
            self.parts.append(f'<rect x="{x}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{x + 14}" y="{y + 1}">{escape(str(name))}</text>')

    def write(self, path):
        self.parts.append("</svg>")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(self.parts) + "\n")


def taskwise_curve(series, path, title="", xlabel="task", ylabel="value"):
    """One polyline per named series of y-values indexed by task (1-based on the axis)."""
    if not series or any(len(v) == 0 for v in series.values()):
        raise InputError("taskwise_curve needs at least one non-empty series")
    ys = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    finite = ys[np.isfinite(ys)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    pad = 0.05 * (hi - lo) if hi > lo else 0.05
    n = max(len(v) for v in series.values())
    c = _Canvas(title, xlabel, ylabel, (1.0, float(max(n, 2))), (lo - pad, hi + pad))
    for i, (name, vals) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(
            f"{_f(c.px(j + 1.0))},{_f(c.py(v))}" for j, v in enumerate(vals) if np.isfinite(v)
        )
        c.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
    c.legend(list(series))
    c.write(path)


def histogram(groups, path, bins=30, title="", xlabel="score", ylabel="density"):
    """Overlaid normalised histograms of several score sets over shared bins."""
    if not groups or any(len(v) == 0 for v in groups.values()):
        raise InputError("histogram needs at least one non-empty group")
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in groups.items()}
    allv = np.concatenate(list(arrays.values()))
    lo, hi = float(allv.min()), float(allv.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    dens = {k: np.histogram(v, bins=edges, density=True)[0] for k, v in arrays.items()}
    top = max(float(d.max()) for d in dens.values()) or 1.0
    c = _Canvas(title, xlabel, ylabel, (lo, hi), (0.0, top * 1.05))
    for i, (name, d) in enumerate(dens.items()):
        color = PALETTE[i % len(PALETTE)]
        for b, h in enumerate(d):
            if h <= 0:
                continue
            x, y = c.px(edges[b]), c.py(h)
            w = c.px(edges[b + 1]) - x
            c.parts.append(
                f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(c.py(0.0) - y)}" '
                f'fill="{color}" fill-opacity="0.45" stroke="none"/>'
            )
    c.legend(list(dens))
    c.write(path)


def emit_plot(data, kind, path, **kwargs):
    if kind == "taskwise_curve":
        return taskwise_curve(data, path, **kwargs)
    if kind == "histogram":
        return histogram(data, path, **kwargs)
    raise InputError(f"unknown plot kind {kind!r}")
