"""Deterministic SVG phase portraits.

The viewport is fixed at 1000 x 1000 pixels.  A data point ``(a, b)`` in the
two plotted coordinates is drawn at::

    px = 500 + 450 * a / R
    py = 500 - 450 * b / R

where ``R`` is the plot radius (1 for sphere data, so the equator seen from
the north pole is the reference circle of radius 450 px).  Numbers are
written with 12 significant digits, so equal inputs give byte-identical
documents.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

__all__ = ["Projection", "to_viewport", "emit_portrait"]

SIZE = 1000
CENTER = 500.0
SCALE = 450.0

_TRAJ_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")
_SET_COLORS = ("#ff7f0e", "#17becf", "#bcbd22", "#9467bd", "#8c564b", "#e377c2")


class Projection:
    """Which two coordinates to plot and the radius that maps to 450 px."""

    def __init__(self, coords=(0, 1), radius: float = 1.0):
        coords = tuple(int(c) for c in coords)
        if len(coords) != 2 or coords[0] == coords[1]:
            raise InputError("projection needs two distinct coordinates")
        if not radius > 0:
            raise InputError("projection radius must be positive")
        self.coords = coords
        self.radius = float(radius)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if max(self.coords) >= pts.shape[1]:
            raise InputError(f"cannot plot coordinate {max(self.coords)} of {pts.shape[1]}-dimensional data")
        return to_viewport(pts[:, self.coords], self.radius)


def to_viewport(ab, radius: float = 1.0) -> np.ndarray:
    ab = np.atleast_2d(np.asarray(ab, dtype=float))
    return np.column_stack([CENTER + SCALE * ab[:, 0] / radius, CENTER - SCALE * ab[:, 1] / radius])


def _f(x) -> str:
    # 12 significant digits; normalise -0
    return format(float(x) + 0.0, ".12g")


def _points(xy) -> str:
    return " ".join(f"{_f(x)},{_f(y)}" for x, y in xy)


def _dims(items):
    return {np.atleast_2d(np.asarray(p)).shape[1] for p in items if len(p)}


def emit_portrait(
    trajectories=(),
    sets=(),
    equilibria=(),
    projection: Projection | None = None,
    title: str = "",
    reference_circle: bool = True,
    cell_radius: float | None = None,
) -> str:
    """SVG document with polylines, shaded cell sets and equilibrium markers.

    ``trajectories`` is a sequence of ``(k, d)`` arrays, ``sets`` a sequence
    of ``(k, d)`` arrays of cell centers and ``equilibria`` a ``(k, d)``
    array.  Data with more than 3 coordinates needs an explicit
    ``projection``.
    """
    trajectories = [np.atleast_2d(np.asarray(t, dtype=float)) for t in trajectories]
    sets = [np.atleast_2d(np.asarray(s, dtype=float)) for s in sets]
    equilibria = np.asarray(equilibria, dtype=float)
    if equilibria.size == 0:
        equilibria = np.zeros((0, 2))
    dims = _dims(trajectories) | _dims(sets) | _dims([equilibria] if len(equilibria) else [])
    if projection is None:
        if dims and max(dims) > 3:
            raise InputError("data with more than 3 coordinates needs a projection")
        projection = Projection()

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>',
    ]
    if title:
        safe = title.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.append(f'<text x="20" y="30" font-family="sans-serif" font-size="20">{safe}</text>')
    out.append('<g id="axes" stroke="#bbbbbb" stroke-width="1">')
    out.append(f'<line x1="{_f(CENTER - SCALE)}" y1="{_f(CENTER)}" x2="{_f(CENTER + SCALE)}" y2="{_f(CENTER)}"/>')
    out.append(f'<line x1="{_f(CENTER)}" y1="{_f(CENTER - SCALE)}" x2="{_f(CENTER)}" y2="{_f(CENTER + SCALE)}"/>')
    out.append("</g>")
    if reference_circle:
        out.append(
            f'<circle id="equator" cx="{_f(CENTER)}" cy="{_f(CENTER)}" r="{_f(SCALE)}" '
            'fill="none" stroke="black" stroke-width="1.5"/>'
        )
    r_px = max(1.5, SCALE * (cell_radius or 0.01) / projection.radius)
    for k, cells in enumerate(sets):
        color = _SET_COLORS[k % len(_SET_COLORS)]
        out.append(f'<g id="set{k}" fill="{color}" fill-opacity="0.35" stroke="none">')
        for x, y in projection(cells):
            out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r_px)}"/>')
        out.append("</g>")
    for k, traj in enumerate(trajectories):
        color = _TRAJ_COLORS[k % len(_TRAJ_COLORS)]
        out.append(
            f'<polyline id="traj{k}" fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{_points(projection(traj))}"/>'
        )
    if len(equilibria):
        out.append('<g id="equilibria" fill="black">')
        for x, y in projection(equilibria):
            out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="6"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
