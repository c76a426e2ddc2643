"""SVG figures written by hand: impact curves and embedding snapshots.

Every number is formatted with a fixed precision so that identical inputs
give byte-identical files.
"""

from __future__ import annotations

import csv
from html import escape

import numpy as np

from .impact import ImpactKind, pdf

WIDTH, HEIGHT = 800, 600
MARGIN = dict(left=70, right=130, top=40, bottom=60)

# Publication-year colour map: evenly spaced stops from dark blue through
# teal and green to yellow, interpolated linearly in RGB.
YEAR_STOPS = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"]


def _fmt(x):
    return f"{x:.3f}".rstrip("0").rstrip(".") if np.isfinite(x) else "0"


def _hex_rgb(h):
    return np.array([int(h[k:k + 2], 16) for k in (1, 3, 5)], dtype=float)


def year_color(value, lo, hi):
    """Colour for ``value`` on the publication-year scale spanning ``[lo, hi]``."""
    u = 0.0 if hi <= lo else float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))
    pos = u * (len(YEAR_STOPS) - 1)
    k = min(int(pos), len(YEAR_STOPS) - 2)
    frac = pos - k
    rgb = (1 - frac) * _hex_rgb(YEAR_STOPS[k]) + frac * _hex_rgb(YEAR_STOPS[k + 1])
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.xlim, self.ylim = xlim, ylim
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
            f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        ]
        self._axes(xlabel, ylabel)

    @property
    def box(self):
        m = MARGIN
        return m["left"], m["top"], WIDTH - m["right"], HEIGHT - m["bottom"]

    def x(self, v):
        x0, _, x1, _ = self.box
        lo, hi = self.xlim
        return x0 + (np.asarray(v, dtype=float) - lo) / (hi - lo) * (x1 - x0)

    def y(self, v):
        _, y0, _, y1 = self.box
        lo, hi = self.ylim
        return y1 - (np.asarray(v, dtype=float) - lo) / (hi - lo) * (y1 - y0)

    def _axes(self, xlabel, ylabel):
        x0, y0, x1, y1 = self.box
        self.parts.append(f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
                          'fill="none" stroke="black"/>')
        for v in np.linspace(*self.xlim, 6):
            px = _fmt(float(self.x(v)))
            self.parts.append(f'<line x1="{px}" y1="{y1}" x2="{px}" y2="{y1 + 5}" stroke="black"/>')
            self.parts.append(f'<text x="{px}" y="{y1 + 18}" text-anchor="middle">{_fmt(v)}</text>')
        for v in np.linspace(*self.ylim, 6):
            py = _fmt(float(self.y(v)))
            self.parts.append(f'<line x1="{x0 - 5}" y1="{py}" x2="{x0}" y2="{py}" stroke="black"/>')
            self.parts.append(f'<text x="{x0 - 8}" y="{py}" text-anchor="end" '
                              f'dominant-baseline="middle">{_fmt(v)}</text>')
        self.parts.append(f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 15}" '
                          f'text-anchor="middle">{escape(xlabel)}</text>')
        self.parts.append(f'<text x="18" y="{(y0 + y1) // 2}" text-anchor="middle" '
                          f'transform="rotate(-90 18 {(y0 + y1) // 2})">{escape(ylabel)}</text>')

    def add(self, element):
        self.parts.append(element)

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _nice_max(v):
    return float(v) * 1.05 if v > 0 else 1.0


def impact_figure(network, params, target, bin_width=0.5, grid_points=200):
    """SVG and CSV rows for one target: fitted impact density over its citation-age histogram.

    The histogram is a density (bar heights integrate to one) so it is on
    the same scale as the curve.
    """
    T = network.horizon
    ages = network.elapsed[network.event_targets == target]
    edges = np.arange(0.0, T + bin_width, bin_width)
    counts, edges = np.histogram(ages, bins=edges)
    density = counts / (counts.sum() * bin_width) if counts.sum() else counts.astype(float)
    grid = np.linspace(T / grid_points, T, grid_points)
    if params.kind is ImpactKind.CONSTANT:
        curve = np.full(grid_points, 1.0 / T)
    else:
        curve = pdf(params.kind, params.impact.take(np.array([target])), grid[None, :])[0]
    top = _nice_max(max(float(np.max(curve)), float(np.max(density, initial=0.0))))
    name = network.target_ids[target]
    c = _Canvas((0.0, T), (0.0, top), f"Impact of {name}", "years since publication", "density")
    for k, d in enumerate(density):
        if d <= 0:
            continue
        x0, x1 = float(c.x(edges[k])), float(c.x(edges[k + 1]))
        yt, yb = float(c.y(d)), float(c.y(0.0))
        c.add(f'<rect x="{_fmt(x0)}" y="{_fmt(yt)}" width="{_fmt(x1 - x0)}" '
              f'height="{_fmt(yb - yt)}" fill="#9ecae1" stroke="#3182bd"/>')
    pts = " ".join(f"{_fmt(float(a))},{_fmt(float(b))}" for a, b in zip(c.x(grid), c.y(curve)))
    c.add(f'<polyline points="{pts}" fill="none" stroke="#d62728" stroke-width="2"/>')
    rows = [("histogram", repr(float(edges[k])), repr(float(edges[k + 1])), repr(float(density[k])))
            for k in range(len(density))]
    rows += [("curve", repr(float(g)), "", repr(float(v))) for g, v in zip(grid, curve)]
    return c.render(), rows


IMPACT_CSV_HEADER = ["series", "x", "x_end", "density"]


def target_mass(network, params, t):
    """``exp(alpha_i) * f_i(t - t_i)``, zero for targets not yet published at ``t``."""
    dt = t - network.target_times
    alive = dt > 0
    out = np.zeros(network.n_targets)
    if not np.any(alive):
        return out
    idx = np.flatnonzero(alive)
    if params.kind is ImpactKind.CONSTANT:
        f = np.ones(len(idx))
    else:
        f = pdf(params.kind, params.impact.take(idx), dt[idx])
    out[idx] = np.exp(params.alpha[idx]) * f
    return out


def space_figures(network, params, years, max_radius=18.0):
    """One SVG per query year (absolute calendar time) on shared axes, plus CSV rows.

    Marker area is not used: the radius itself is proportional to each
    target's mass, scaled by the largest mass over all query years.
    """
    if params.dim != 2:
        raise ValueError("embedding snapshots need a 2-dimensional embedding")
    z = params.z
    pad = 0.05 * max(float(np.ptp(z[:, 0])), float(np.ptp(z[:, 1])), 1e-9)
    xlim = (float(z[:, 0].min()) - pad, float(z[:, 0].max()) + pad)
    ylim = (float(z[:, 1].min()) - pad, float(z[:, 1].max()) + pad)
    masses = [target_mass(network, params, y - network.origin) for y in years]
    peak = max((float(m.max()) for m in masses), default=0.0)
    scale = max_radius / peak if peak > 0 else 0.0
    pub = network.target_times + network.origin
    lo, hi = float(pub.min()), float(pub.max())
    svgs, rows = [], []
    for year, m in zip(years, masses):
        c = _Canvas(xlim, ylim, f"Targets at {_fmt(year)}", "dimension 1", "dimension 2")
        for i in np.argsort(-m, kind="stable"):
            r = m[i] * scale
            rows.append((_fmt(year), network.target_ids[i], repr(float(z[i, 0])), repr(float(z[i, 1])),
                         repr(float(pub[i])), repr(float(m[i]))))
            if r <= 0:
                continue
            c.add(f'<circle cx="{_fmt(float(c.x(z[i, 0])))}" cy="{_fmt(float(c.y(z[i, 1])))}" '
                  f'r="{_fmt(r)}" fill="{year_color(pub[i], lo, hi)}" fill-opacity="0.7"/>')
        _year_legend(c, lo, hi)
        svgs.append(c.render())
    return svgs, rows


SPACE_CSV_HEADER = ["query_year", "target", "z1", "z2", "publication_year", "mass"]


def _year_legend(c, lo, hi, steps=5):
    x = WIDTH - MARGIN["right"] + 20
    c.add(f'<text x="{x}" y="{MARGIN["top"] + 10}">publication</text>')
    for k, v in enumerate(np.linspace(lo, hi, steps)):
        y = MARGIN["top"] + 30 + 22 * k
        c.add(f'<circle cx="{x + 6}" cy="{y}" r="6" fill="{year_color(v, lo, hi)}"/>')
        c.add(f'<text x="{x + 18}" y="{y}" dominant-baseline="middle">{_fmt(v)}</text>')


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)
