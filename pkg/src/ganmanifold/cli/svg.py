"""Minimal deterministic SVG figures for 2D experiments.

Every number is written with a fixed number of decimals and elements are
emitted in a fixed order, so identical inputs produce identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2", "#edc948",
           "#9c755f")
LIGHT = ("#c6d6e8", "#fbd6b3", "#c8e2c3", "#f5c2c3", "#e3d0df", "#cfe6e4", "#f8ecbf",
         "#dccabe")

WIDTH = HEIGHT = 600
MARGIN = 60


def _n(v: float) -> str:
    return f"{float(v):.3f}"


class Canvas:
    """Plot area mapping data coordinates ``bounds = (xmin, xmax, ymin, ymax)`` to pixels."""

    def __init__(self, bounds, title: str, xlabel: str = "x0", ylabel: str = "x1"):
        self.xmin, self.xmax, self.ymin, self.ymax = (float(b) for b in bounds)
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("plot bounds must satisfy xmin < xmax and ymin < ymax")
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.body: list[str] = []
        self.inner = WIDTH - 2 * MARGIN

    def px(self, x):
        return MARGIN + (np.asarray(x, float) - self.xmin) / (self.xmax - self.xmin) * self.inner

    def py(self, y):
        return HEIGHT - MARGIN - (np.asarray(y, float) - self.ymin) / (self.ymax - self.ymin) * self.inner

    def rect(self, x0, y0, x1, y1, fill, cls="cell"):
        """Rectangle between data corners (x0, y0) and (x1, y1)."""
        left, right = self.px(x0), self.px(x1)
        top, bottom = self.py(y1), self.py(y0)
        self.body.append(f'<rect x="{_n(left)}" y="{_n(top)}" width="{_n(right - left)}" '
                         f'height="{_n(bottom - top)}" fill="{fill}" class="{cls}"/>')

    def circle(self, x, y, r, fill, stroke="none", opacity=1.0):
        self.body.append(f'<circle cx="{_n(self.px(x))}" cy="{_n(self.py(y))}" r="{_n(r)}" '
                         f'fill="{fill}" stroke="{stroke}" fill-opacity="{_n(opacity)}"/>')

    def line(self, x0, y0, x1, y1, stroke="#333333", width=1.0):
        self.body.append(f'<line x1="{_n(self.px(x0))}" y1="{_n(self.py(y0))}" '
                         f'x2="{_n(self.px(x1))}" y2="{_n(self.py(y1))}" stroke="{stroke}" '
                         f'stroke-width="{_n(width)}" marker-end="url(#arrow)"/>')

    def polyline(self, xs, ys, stroke):
        pts = " ".join(f"{_n(a)},{_n(b)}" for a, b in zip(self.px(xs), self.py(ys)))
        self.body.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
                         f'stroke-width="1.500"/>')

    def text(self, x_px, y_px, s, anchor="middle", size=12, rotate=False):
        extra = f' transform="rotate(-90 {_n(x_px)} {_n(y_px)})"' if rotate else ""
        self.body.append(f'<text x="{_n(x_px)}" y="{_n(y_px)}" font-size="{size}" '
                         f'text-anchor="{anchor}" font-family="sans-serif"{extra}>'
                         f'{escape(s)}</text>')

    def legend(self, entries):
        for i, (label, color) in enumerate(entries):
            y = MARGIN + 14 + 16 * i
            self.body.append(f'<rect x="{_n(WIDTH - MARGIN - 150)}" y="{_n(y - 9)}" '
                             f'width="10.000" height="10.000" fill="{color}" class="legend"/>')
            self.text(WIDTH - MARGIN - 135, y, label, anchor="start", size=11)

    def _axes(self) -> list[str]:
        out = ['<g class="axes" stroke="#000000" fill="none">',
               f'<path d="M{MARGIN},{MARGIN} H{WIDTH - MARGIN} V{HEIGHT - MARGIN} H{MARGIN} Z"/>',
               "</g>"]
        ticks = []
        for v in np.linspace(self.xmin, self.xmax, 5):
            ticks.append(f'<text x="{_n(self.px(v))}" y="{_n(HEIGHT - MARGIN + 16)}" '
                         f'font-size="10" text-anchor="middle" font-family="sans-serif">'
                         f'{v:.2f}</text>')
        for v in np.linspace(self.ymin, self.ymax, 5):
            ticks.append(f'<text x="{_n(MARGIN - 6)}" y="{_n(self.py(v) + 3)}" '
                         f'font-size="10" text-anchor="end" font-family="sans-serif">'
                         f'{v:.2f}</text>')
        return out + ticks

    def render(self) -> str:
        head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}">',
                '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" '
                'markerWidth="4" markerHeight="4" orient="auto">'
                '<path d="M0,0 L10,5 L0,10 z" fill="#333333"/></marker></defs>',
                f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff" '
                f'class="background"/>']
        labels = [f'<text x="{WIDTH / 2:.3f}" y="{MARGIN / 2:.3f}" font-size="14" '
                  f'text-anchor="middle" font-family="sans-serif">{escape(self.title)}</text>',
                  f'<text x="{WIDTH / 2:.3f}" y="{HEIGHT - 18:.3f}" font-size="12" '
                  f'text-anchor="middle" font-family="sans-serif">{escape(self.xlabel)}</text>',
                  f'<text x="18.000" y="{HEIGHT / 2:.3f}" font-size="12" text-anchor="middle" '
                  f'font-family="sans-serif" transform="rotate(-90 18.000 {HEIGHT / 2:.3f})">'
                  f'{escape(self.ylabel)}</text>']
        return "\n".join(head + ['<g class="plot">'] + self.body + ["</g>"] + self._axes()
                         + labels + ["</svg>", ""])


def decision_boundary(predict, bounds, resolution: int, unlabeled=None, labeled=None,
                      labeled_y=None, title="Decision boundary") -> str:
    """``resolution**2`` grid cells coloured by ``predict(points) -> labels``, then data."""
    c = Canvas(bounds, title)
    xs = np.linspace(c.xmin, c.xmax, resolution + 1)
    ys = np.linspace(c.ymin, c.ymax, resolution + 1)
    cx, cy = (xs[:-1] + xs[1:]) / 2, (ys[:-1] + ys[1:]) / 2
    gx, gy = np.meshgrid(cx, cy)  # row-major: y outer, x inner
    labels = np.asarray(predict(np.column_stack([gx.ravel(), gy.ravel()])))
    k = 0
    for j in range(resolution):
        for i in range(resolution):
            c.rect(xs[i], ys[j], xs[i + 1], ys[j + 1], LIGHT[int(labels[k]) % len(LIGHT)])
            k += 1
    if unlabeled is not None:
        for x, y in unlabeled:
            c.circle(x, y, 1.2, "#555555", opacity=0.6)
    if labeled is not None:
        for (x, y), lab in zip(labeled, labeled_y):
            c.circle(x, y, 6.0, PALETTE[int(lab) % len(PALETTE)], stroke="#000000")
    return c.render()


def regularizer_magnitude(points, magnitudes, bounds, data=None,
                          title="Magnitude of the regularization term") -> str:
    """Generated points shaded and sized by their per-sample penalty (darker = larger)."""
    c = Canvas(bounds, title)
    if data is not None:
        for x, y in data:
            c.circle(x, y, 1.0, "#bbbbbb")
    m = np.asarray(magnitudes, float)
    scale = m / m.max() if m.size and m.max() > 0 else np.zeros_like(m)
    for (x, y), s in zip(points, scale):
        c.circle(x, y, 2.0 + 4.0 * s, "#08306b", opacity=0.15 + 0.85 * s)
    return c.render()


def direction_field(points, vectors, bounds, data=None,
                    title="Direction of invariance") -> str:
    """Arrows from each generated point along its (scaled) direction vector."""
    c = Canvas(bounds, title)
    if data is not None:
        for x, y in data:
            c.circle(x, y, 1.0, "#bbbbbb")
    for (x, y), (dx, dy) in zip(points, vectors):
        c.line(x, y, x + dx, y + dy)
    return c.render()


def samples_overlay(samples, data, bounds, title="Generated samples") -> str:
    c = Canvas(bounds, title)
    for x, y in data:
        c.circle(x, y, 1.5, "#bbbbbb")
    for x, y in samples:
        c.circle(x, y, 2.0, PALETTE[3], opacity=0.8)
    c.legend([("data", "#bbbbbb"), ("generated", PALETTE[3])])
    return c.render()


def loss_curves(steps, series: dict, title="Training losses") -> str:
    """One polyline per named series (non-finite entries are skipped)."""
    steps = np.asarray(steps, float)
    finite = [np.asarray(v, float) for v in series.values()]
    vals = np.concatenate([v[np.isfinite(v)] for v in finite]) if finite else np.zeros(1)
    if vals.size == 0:
        vals = np.zeros(1)
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    x0, x1 = (float(steps.min()), float(steps.max())) if steps.size else (0.0, 1.0)
    if x1 <= x0:
        x1 = x0 + 1.0
    pad = 0.05 * (hi - lo)
    c = Canvas((x0, x1, lo - pad, hi + pad), title, xlabel="step", ylabel="loss")
    entries = []
    for i, (name, v) in enumerate(series.items()):
        v = np.asarray(v, float)
        ok = np.isfinite(v)
        if ok.sum() >= 1:
            c.polyline(steps[ok], v[ok], PALETTE[i % len(PALETTE)])
            entries.append((name, PALETTE[i % len(PALETTE)]))
    c.legend(entries)
    return c.render()
