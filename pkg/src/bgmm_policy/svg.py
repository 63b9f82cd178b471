"""Static SVG figures: scalar maps, flow arrows and trajectory overlays.

Coordinates are formatted with a fixed number of decimals so identical inputs
give byte-identical files.
"""

from xml.sax.saxutils import escape

import numpy as np

WIDTH = 480
HEIGHT = 480
PAD = 24

# viridis anchors, enough for a perceptually ordered ramp
_RAMP = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def _f(v):
    return f"{v:.3f}"


def _colour(t):
    t = float(np.clip(t, 0.0, 1.0)) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    rgb = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


class _Canvas:
    def __init__(self, x0, x1, y0, y1, title=""):
        if not (x1 > x0 and y1 > y0):
            raise ValueError("empty plot extent")
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.parts = []
        self.title = title

    def px(self, x):
        return PAD + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * PAD)

    def py(self, y):
        return HEIGHT - PAD - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * PAD)

    def add(self, s):
        self.parts.append(s)

    def render(self):
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        )
        body = [f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
        if self.title:
            body.append(f'<title>{escape(self.title)}</title>')
        body.extend(self.parts)
        body.append(
            f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" '
            'fill="none" stroke="black" stroke-width="1"/>'
        )
        return head + "\n".join(body) + "\n</svg>\n"


def entropy_map_svg(xs, ys, values, title="entropy") -> str:
    """Heat map of ``values[i, j]`` at node ``(xs[j], ys[i])``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(ys), len(xs)):
        raise ValueError(f"values shape {values.shape} does not match grid {(len(ys), len(xs))}")
    dx = (xs[-1] - xs[0]) / (len(xs) - 1)
    dy = (ys[-1] - ys[0]) / (len(ys) - 1)
    c = _Canvas(xs[0] - dx / 2, xs[-1] + dx / 2, ys[0] - dy / 2, ys[-1] + dy / 2, title)
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo if hi > lo else 1.0
    w = c.px(xs[0] + dx) - c.px(xs[0])
    h = c.py(ys[0]) - c.py(ys[0] + dy)
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            c.add(
                f'<rect x="{_f(c.px(x - dx / 2))}" y="{_f(c.py(y + dy / 2))}" width="{_f(w)}" '
                f'height="{_f(h)}" fill="{_colour((values[i, j] - lo) / span)}"/>'
            )
    return c.render()


def flowfield_svg(xs, ys, vectors, title="flow field") -> str:
    """Arrows of ``vectors[i, j]`` (2D) drawn from node ``(xs[j], ys[i])``."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape != (len(ys), len(xs), 2):
        raise ValueError(f"vectors shape {vectors.shape} does not match grid {(len(ys), len(xs), 2)}")
    c = _Canvas(xs[0], xs[-1], ys[0], ys[-1], title)
    cell = min((xs[-1] - xs[0]) / max(len(xs) - 1, 1), (ys[-1] - ys[0]) / max(len(ys) - 1, 1))
    norms = np.linalg.norm(vectors, axis=-1)
    top = float(np.max(norms)) if np.max(norms) > 0 else 1.0
    scale = 0.9 * cell / top
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            u = vectors[i, j] * scale
            x0, y0 = c.px(x), c.py(y)
            x1, y1 = c.px(x + u[0]), c.py(y + u[1])
            c.add(
                f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y1)}" '
                'stroke="black" stroke-width="0.8"/>'
            )
            c.add(f'<circle cx="{_f(x1)}" cy="{_f(y1)}" r="1.2" fill="black"/>')
    return c.render()


def rollouts_svg(trajectories, band=None, goal=None, title="rollouts") -> str:
    """One polyline per trajectory (first two state coordinates)."""
    if not trajectories:
        raise ValueError("no trajectories to draw")
    pts = np.vstack([np.asarray(t)[:, :2] for t in trajectories])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    # square extent keeps the aspect ratio
    mid, half = (lo + hi) / 2, max(hi - lo) / 2
    c = _Canvas(mid[0] - half, mid[0] + half, mid[1] - half, mid[1] + half, title)
    if band is not None:
        c.add(
            f'<rect x="{_f(c.px(band.x0))}" y="{_f(c.py(band.y1))}" '
            f'width="{_f(c.px(band.x1) - c.px(band.x0))}" height="{_f(c.py(band.y0) - c.py(band.y1))}" '
            'fill="#bbbbbb" stroke="none"/>'
        )
    for k, traj in enumerate(trajectories):
        traj = np.asarray(traj)
        coords = " ".join(f"{_f(c.px(p[0]))},{_f(c.py(p[1]))}" for p in traj[:, :2])
        c.add(
            f'<polyline points="{coords}" fill="none" stroke="{_PALETTE[k % len(_PALETTE)]}" '
            'stroke-width="1"/>'
        )
    if goal is not None:
        c.add(f'<circle cx="{_f(c.px(goal[0]))}" cy="{_f(c.py(goal[1]))}" r="4" fill="none" stroke="black"/>')
    return c.render()
