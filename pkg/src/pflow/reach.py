"""Set-valued computations on cell grids and sphere meshes.

Reachable and controllable sets are propagated over a box grid of R^n, chain
control sets are the non-trivial strongly connected components of a cell
transition graph, and tails of sphere trajectories are matched against the
resulting sets.

Two transition rules are available.  On box grids the default
(``mode="enclosure"``) sends a cell to every cell meeting the bounding box of
its exact image under the time-``tau`` map ``x -> exp(A tau) x + Gamma(tau) B v``,
optionally padded by ``pad``.  This is an outer approximation without extra
fattening.  On sphere meshes (and on box grids with ``mode="center"``) the
image of the cell center is fattened by ``eps`` plus the cell radius.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import InputError, ParameterError
from .spectral import SpectralData, matrix_exponential
from .sphere import InvariantCircle, exact_flow, sphere_trajectory
from .system import ControlSignal, LinearSystem, exp_and_gamma

__all__ = [
    "Grid",
    "SphereMesh",
    "CellGraph",
    "SetApproximation",
    "LimitResult",
    "reachable_set",
    "controllable_set",
    "control_set_D0",
    "support_function",
    "sphere_directions",
    "grid_graph",
    "mesh_graph",
    "chain_control_sets",
    "equator_chain_sets",
    "central_sets_on_sphere",
    "sphere_chain_sets",
    "SphereSet",
    "limit_set",
    "sets_to_csv",
]

ESCAPE = "unbounded-escape"
_TOUCH = 1e-9


# ---------------------------------------------------------------- carriers


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform box grid; cells are indexed in C order."""

    lower: np.ndarray
    upper: np.ndarray
    cells: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        cells = tuple(int(c) for c in np.broadcast_to(self.cells, lo.shape))
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
            raise InputError("grid box must have lower < upper componentwise")
        if min(cells) < 1:
            raise InputError("grid needs at least one cell per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def cube(cls, n: int, half_width: float = 2.0, cells: int = 201) -> "Grid":
        return cls(-half_width * np.ones(n), half_width * np.ones(n), (cells,) * n)

    kind = "grid"

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    @property
    def cell_radius(self) -> float:
        return self.cell_diameter / 2

    def multi_index(self, idx) -> np.ndarray:
        return np.array(np.unravel_index(np.asarray(idx), self.cells)).T

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(np.asarray(multi).T, self.cells)

    def centers(self, idx=None) -> np.ndarray:
        if idx is None:
            idx = np.arange(self.size)
        return self.lower + (self.multi_index(idx) + 0.5) * self.width

    def index_of(self, x) -> int:
        x = np.asarray(x, dtype=float)
        if x.shape != self.lower.shape:
            raise InputError(f"point must have shape {self.lower.shape}")
        if np.any(x < self.lower) or np.any(x > self.upper):
            raise InputError("point lies outside the grid box")
        j = np.minimum(((x - self.lower) / self.width).astype(int), np.asarray(self.cells) - 1)
        return int(self.flat_index(j[None, :])[0])

    def describe(self) -> dict:
        return {"kind": "grid", "lower": self.lower.tolist(), "upper": self.upper.tolist(), "cells": list(self.cells)}


_ICO_T = (1 + 5**0.5) / 2


def _icosahedron():
    t = _ICO_T
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
         [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(verts, faces):
    verts = list(map(tuple, verts))
    lookup = {v: i for i, v in enumerate(verts)}
    cache = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = np.add(verts[a], verts[b])
            m = tuple(m / np.linalg.norm(m))
            if m not in lookup:
                lookup[m] = len(verts)
                verts.append(m)
            cache[key] = lookup[m]
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(out)


@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Finite set of unit vectors standing for the cells of a sphere.

    ``points`` live in R^{n+1}; ``cell_radius`` bounds the distance from any
    point of the meshed sub-sphere to its nearest mesh point.
    """

    points: np.ndarray
    cell_radius: float
    label: str = "mesh"

    kind = "mesh"

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def cell_diameter(self) -> float:
        return 2 * self.cell_radius

    def centers(self, idx=None) -> np.ndarray:
        return self.points if idx is None else self.points[np.asarray(idx)]

    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def index_of(self, s) -> int:
        return int(self.tree().query(np.asarray(s, dtype=float))[1])

    @classmethod
    def icosahedral(cls, level: int, basis=None, label: str = "icosahedral") -> "SphereMesh":
        """Subdivided icosahedron on S^2, optionally placed on span(basis)."""
        v, f = _icosahedron()
        for _ in range(level):
            v, f = _subdivide(v, f)
        # covering radius: farthest a face point can be from all its vertices
        cen = v[f].mean(axis=1)
        cen /= np.linalg.norm(cen, axis=1, keepdims=True)
        radius = float(np.max(np.arccos(np.clip(np.einsum("ij,ikj->ik", cen, v[f]), -1, 1))))
        pts = v if basis is None else v @ np.asarray(basis, dtype=float).T
        return cls(pts, radius, label)

    @classmethod
    def circle(cls, count: int, basis=None, label: str = "circle") -> "SphereMesh":
        """``count`` equally spaced points on a great circle (``count`` even)."""
        if count % 2:
            raise InputError("use an even number of points so the mesh is antipodally symmetric")
        theta = 2 * np.pi * np.arange(count) / count
        v = np.column_stack([np.cos(theta), np.sin(theta)])
        pts = v if basis is None else v @ np.asarray(basis, dtype=float).T
        return cls(pts, math.pi / count, label)

    def describe(self) -> dict:
        return {"kind": "mesh", "label": self.label, "points": self.size, "cell_radius": self.cell_radius}


# ---------------------------------------------------------------- graphs and sets


@dataclass(frozen=True, eq=False)
class CellGraph:
    """Directed transition graph over cells of a grid or mesh."""

    carrier: Grid | SphereMesh
    rows: np.ndarray
    cols: np.ndarray
    escape: np.ndarray
    params: dict

    @property
    def size(self) -> int:
        return self.carrier.size

    def matrix(self):
        data = np.ones(len(self.rows), dtype=np.int8)
        m = coo_matrix((data, (self.rows, self.cols)), shape=(self.size, self.size)).tocsr()
        m.sum_duplicates()
        return m


@dataclass(eq=False)
class SetApproximation:
    """Cell set approximating a reachable, controllable, control or chain set."""

    kind: str
    cells: np.ndarray
    carrier: Grid | SphereMesh
    params: dict = field(default_factory=dict)
    outer: bool = True
    flags: dict = field(default_factory=dict)
    region: str | None = None
    antipode: int | None = None

    def __len__(self):
        return len(self.cells)

    def centers(self) -> np.ndarray:
        return self.carrier.centers(self.cells)

    def cell_set(self) -> set:
        return set(int(c) for c in self.cells)

    def extent(self) -> np.ndarray:
        """Per-axis ``(min, max)`` of the union of grid cells."""
        if not isinstance(self.carrier, Grid):
            raise InputError("extent is defined for box grids only")
        c = self.centers()
        h = self.carrier.width / 2
        return np.column_stack([c.min(axis=0) - h, c.max(axis=0) + h])

    @property
    def escapes(self) -> bool:
        return any(ESCAPE in f for f in self.flags.values())


def _control_sample(sys: LinearSystem, controls) -> np.ndarray:
    if controls is None:
        return sys.control_sample()
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[1] != sys.m:
        raise InputError(f"controls must have {sys.m} columns")
    for v in controls:
        if not sys.control_range.contains(v, 1e-12):
            raise InputError("control sample leaves the control range")
    return controls


def _offsets(sys: LinearSystem, tau: float, controls: np.ndarray, substeps: int) -> np.ndarray:
    """End points from 0 under every control sequence held constant on ``substeps`` pieces."""
    E, Gamma = exp_and_gamma(sys.A, tau / substeps)
    step = controls @ (Gamma @ sys.B).T
    out = np.zeros((1, sys.n))
    for _ in range(substeps):
        out = (out @ E.T)[:, None, :] + step[None, :, :]
        out = np.unique(out.reshape(-1, sys.n).round(15), axis=0)
    return out


def _grid_images(sys, grid: Grid, cells: np.ndarray, offsets, tau, pad, mode, eps):
    """Targets of ``cells`` for every control offset: (source, target) pairs and escape mask."""
    E, _ = exp_and_gamma(sys.A, tau)
    centers = grid.centers(cells)
    h = grid.width
    if mode == "enclosure":
        half = np.abs(E) @ (h / 2) + pad
    else:
        half = np.full(grid.dim, eps + grid.cell_radius)
    srcs, tgts, esc_cells = [], [], []
    N = np.asarray(grid.cells)
    base = centers @ E.T
    for off_v in offsets:
        img = base + off_v
        lo_f = (img - half - grid.lower) / h
        hi_f = (img + half - grid.lower) / h
        # cells that merely share a face with the image are not targets
        lo = np.floor(lo_f + _TOUCH).astype(np.int64)
        hi = np.ceil(hi_f - _TOUCH).astype(np.int64) - 1
        hi = np.maximum(hi, lo)
        escaped = np.any(lo < 0, axis=1) | np.any(hi >= N, axis=1)
        esc_cells.append(cells[escaped])
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, N - 1)
        valid = np.all(hi >= lo, axis=1)
        span = hi - lo + 1
        smax = span[valid].max(axis=0) if valid.any() else np.ones(grid.dim, dtype=np.int64)
        for off in itertools.product(*[range(int(k)) for k in smax]):
            off = np.asarray(off)
            ok = valid & np.all(off < span, axis=1)
            if not ok.any():
                continue
            srcs.append(cells[ok])
            tgts.append(grid.flat_index(lo[ok] + off))
    src = np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.int64)
    tgt = np.concatenate(tgts) if tgts else np.zeros(0, dtype=np.int64)
    esc = np.unique(np.concatenate(esc_cells)) if esc_cells else np.zeros(0, dtype=np.int64)
    return src, tgt, esc


def _check_transition_params(carrier, mode, eps, pad, tau):
    if not tau > 0:
        raise ParameterError("tau must be positive")
    if mode not in ("enclosure", "center"):
        raise ParameterError("mode must be 'enclosure' or 'center'")
    if mode == "center" and eps < carrier.cell_diameter:
        raise ParameterError(f"eps={eps} is below the cell diameter {carrier.cell_diameter}")
    if pad < 0:
        raise ParameterError("pad must be non-negative")


def _sweep_times(sys, grid: Grid, tau: float, controls: np.ndarray, cap: int = 64) -> list:
    """Intermediate times in ``(0, tau)`` at which no point of the box moves more than a cell."""
    reach = np.maximum(np.abs(grid.lower), np.abs(grid.upper))
    speed = np.abs(sys.A) @ reach + np.abs(controls @ sys.B.T).max(axis=0)
    k = int(min(cap, max(1, math.ceil(float(np.max(speed * tau / grid.width))))))
    return [tau * j / k for j in range(1, k)]


def _propagate(sys, grid, start, T, controls, tau, pad, mode, eps, substeps, kind):
    _check_transition_params(grid, mode, eps, pad, tau)
    controls = _control_sample(sys, controls)
    offsets = _offsets(sys, tau, controls, substeps)
    # cells crossed between the sampled times belong to the set but are not propagated
    sweeps = [(s, _offsets(sys, s, controls, 1)) for s in _sweep_times(sys, grid, tau, controls)]
    reached = np.zeros(grid.size, dtype=bool)
    swept = np.zeros(grid.size, dtype=bool)
    escape = np.zeros(grid.size, dtype=bool)
    reached[start] = True
    frontier = np.array([start])
    steps = int(math.ceil(T / tau - 1e-12))
    for _ in range(steps):
        if len(frontier) == 0:
            break
        _, tgt, esc = _grid_images(sys, grid, frontier, offsets, tau, pad, mode, eps)
        escape[esc] = True
        for s, off in sweeps:
            _, mid, mid_esc = _grid_images(sys, grid, frontier, off, s, pad, mode, eps)
            escape[mid_esc] = True
            swept[mid] = True
        new = np.unique(tgt)
        new = new[~reached[new]]
        reached[new] = True
        frontier = new
    reached |= swept
    cells = np.flatnonzero(reached)
    flags = {int(c): {ESCAPE} for c in np.flatnonzero(escape & reached)}
    params = {"method": "cells", "T": T, "tau": tau, "substeps": substeps, "sweeps": len(sweeps), "pad": pad, "mode": mode,
              "controls": controls.tolist()}
    if mode == "center":
        params["eps"] = eps
    return SetApproximation(kind, cells, grid, params, True, flags)


def sphere_directions(n: int, count: int | None = None) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^n (axes included)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        count = 720 if count is None else count
        th = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    if n == 3:
        count = 3000 if count is None else count
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        phi = np.pi * (1 + 5**0.5) * k
        r = np.sqrt(1 - z**2)
        d = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    else:
        count = 6000 if count is None else count
        d = np.random.default_rng(0).standard_normal((count, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.vstack([d, np.eye(n), -np.eye(n)])


def _adapted_directions(sys: LinearSystem) -> np.ndarray:
    """Generic directions plus directions annihilating sums of Lyapunov spaces.

    Reachable sets from rest points are unbounded-like along unstable (for
    ``R``) or stable (for ``C``) spaces; only directions exactly orthogonal
    to those spaces give useful bounds, so they are added explicitly.
    """
    from .spectral import spectral_decompose

    spaces = spectral_decompose(sys.A).spaces
    n = sys.n
    out = [sphere_directions(n)]
    for k in range(1, len(spaces)):
        for subset in itertools.combinations(range(len(spaces)), k):
            others = np.hstack([spaces[i] for i in range(len(spaces)) if i not in subset])
            # directions orthogonal to the complementary spaces
            _, sv, vh = np.linalg.svd(others.T)
            null = vh[others.shape[1]:].T
            if null.shape[1] == 0:
                continue
            out.append(sphere_directions(null.shape[1]) @ null.T)
    return np.vstack(out)


def _max_over_range(sys: LinearSystem, c: np.ndarray) -> np.ndarray:
    # max over v in U of <c, v>, row-wise
    rng = sys.control_range
    if hasattr(rng, "lower"):
        return np.sum(np.maximum(c * rng.lower, c * rng.upper), axis=-1)
    return np.max(c @ rng.vertices().T, axis=-1)


def support_function(sys: LinearSystem, directions: np.ndarray, T: float, ds: float = 0.005) -> np.ndarray:
    """Upper bounds for the support function of the time-``T`` reachable set from 0.

    Integrates ``max_v <l, exp(As) B v>`` over ``[0, T]`` with the trapezoid
    rule and adds twice the difference to the half-resolution estimate as
    a safety margin.
    """
    steps = max(2, int(math.ceil(T / ds)))
    steps += steps % 2
    d = T / steps
    E = matrix_exponential(sys.A, d)
    M = sys.B.copy()
    vals = np.empty((steps + 1, len(directions)))
    for k in range(steps + 1):
        vals[k] = _max_over_range(sys, directions @ M)
        M = E @ M
    fine = d * (vals[1:-1].sum(axis=0) + (vals[0] + vals[-1]) / 2)
    coarse = 2 * d * (vals[2:-1:2].sum(axis=0) + (vals[0] + vals[-1]) / 2)
    return fine + 2 * np.abs(fine - coarse)


def _support_cells(sys, grid: Grid, x0, T, kind, directions):
    x0 = np.asarray(x0, dtype=float)
    if np.linalg.norm(sys.A @ x0) > 1e-12 * max(1.0, np.linalg.norm(x0)):
        raise InputError("the support route needs a rest point of the uncontrolled system")
    dirs = _adapted_directions(sys) if directions is None else np.asarray(directions, dtype=float)
    h = support_function(sys, dirs, T)
    half = np.abs(dirs) @ (grid.width / 2)
    keep = np.zeros(grid.size, dtype=bool)
    for part in np.array_split(np.arange(grid.size), max(1, grid.size // 20_000)):
        lowest = (grid.centers(part) - x0) @ dirs.T - half
        keep[part] = np.all(lowest <= h, axis=1)
    cells = np.flatnonzero(keep)
    multi = grid.multi_index(cells)
    edge = np.any((multi == 0) | (multi == np.asarray(grid.cells) - 1), axis=1)
    flags = {int(c): {ESCAPE} for c in cells[edge]}
    params = {"method": "support", "T": T, "directions": len(dirs)}
    return SetApproximation(kind, cells, grid, params, True, flags)


def reachable_set(
    sys: LinearSystem,
    grid: Grid,
    x0,
    T: float,
    controls=None,
    tau: float = 0.1,
    pad: float = 0.0,
    mode: str = "enclosure",
    eps: float | None = None,
    substeps: int = 1,
    method: str = "cells",
    directions=None,
) -> SetApproximation:
    """Cells reachable from the cell of ``x0`` up to time ``T``.

    ``method="cells"`` propagates cells forward in ``ceil(T/tau)`` steps;
    every step applies each sequence of sampled controls held constant on
    ``substeps`` equal pieces.  Cells crossed between steps (under constant
    sampled controls) are added without being propagated further.  Targets
    outside the box are dropped and their source cell flagged
    ``unbounded-escape``.

    ``method="support"`` uses that the reachable set from a rest point is
    convex: a cell is kept unless one of ``directions`` separates it from
    the set.  Cells on the box boundary are flagged.
    """
    eps = 1.5 * grid.cell_diameter if eps is None else eps
    start = grid.index_of(x0)
    if method == "support":
        return _support_cells(sys, grid, x0, T, "reachable", directions)
    if method != "cells":
        raise ParameterError("method must be 'cells' or 'support'")
    return _propagate(sys, grid, start, T, controls, tau, pad, mode, eps, substeps, "reachable")


def controllable_set(
    sys: LinearSystem,
    grid: Grid,
    x,
    T: float,
    controls=None,
    tau: float = 0.1,
    pad: float = 0.0,
    mode: str = "enclosure",
    eps: float | None = None,
    substeps: int = 1,
    method: str = "cells",
    directions=None,
) -> SetApproximation:
    """Cells from which the cell of ``x`` can be reached: reachability for ``x' = -Ax - Bu``.

    Under this cell semantics "reaching" means entering the target cell, so
    points that only approach ``x`` asymptotically are included once they get
    within a cell of it.
    """
    out = reachable_set(sys.reversed(), grid, x, T, controls, tau, pad, mode, eps, substeps, method, directions)
    out.kind = "controllable"
    return out


def control_set_D0(
    sys: LinearSystem,
    spectral: SpectralData | None,
    grid: Grid,
    T: float,
    controls=None,
    tau: float = 0.1,
    pad: float = 0.0,
    substeps: int = 1,
    method: str = "cells",
) -> SetApproximation:
    """Approximation of the control set around 0 as ``R(0) & C(0)``.

    With ``spectral`` given, ``params["projected_extents"]`` records for every
    Lyapunov space the range of G-coordinates of the cell centers, which is
    how the product structure of the set can be inspected.
    """
    zero = np.zeros(grid.dim)
    kw = dict(controls=controls, tau=tau, pad=pad, substeps=substeps, method=method)
    R = reachable_set(sys, grid, zero, T, **kw)
    C = controllable_set(sys, grid, zero, T, **kw)
    cells = np.intersect1d(R.cells, C.cells)
    flags = {c: R.flags.get(c, set()) | C.flags.get(c, set()) for c in map(int, cells)}
    flags = {c: f for c, f in flags.items() if f}
    params = dict(R.params)
    if spectral is not None:
        centers = grid.centers(cells)
        G = spectral.gram
        extents = []
        for basis in spectral.spaces:
            coords = centers @ G @ basis
            extents.append([coords.min(axis=0).tolist(), coords.max(axis=0).tolist()])
        params["projected_extents"] = extents
    return SetApproximation("control_set", cells, grid, params, False, flags)


def grid_graph(
    sys: LinearSystem,
    grid: Grid,
    tau: float = 0.1,
    controls=None,
    pad: float = 0.0,
    mode: str = "enclosure",
    eps: float | None = None,
    substeps: int = 1,
) -> CellGraph:
    eps = 1.5 * grid.cell_diameter if eps is None else eps
    _check_transition_params(grid, mode, eps, pad, tau)
    controls = _control_sample(sys, controls)
    offsets = _offsets(sys, tau, controls, substeps)
    cells = np.arange(grid.size)
    chunks = max(1, grid.size * len(offsets) // 200_000)
    rows, cols, escs = [], [], []
    for part in np.array_split(cells, chunks):
        s, t, e = _grid_images(sys, grid, part, offsets, tau, pad, mode, eps)
        # duplicates are common with many offsets; drop them early
        pairs = np.unique(np.column_stack([s, t]), axis=0)
        rows.append(pairs[:, 0])
        cols.append(pairs[:, 1])
        escs.append(e)
    escape = np.zeros(grid.size, dtype=bool)
    escape[np.concatenate(escs)] = True
    params = {"tau": tau, "substeps": substeps, "pad": pad, "mode": mode, "controls": controls.tolist()}
    if mode == "center":
        params["eps"] = eps
    return CellGraph(grid, np.concatenate(rows), np.concatenate(cols), escape, params)


def mesh_graph(
    sys: LinearSystem,
    mesh: SphereMesh,
    tau: float = 1.0,
    controls=None,
    eps: float | None = None,
    substeps: int = 1,
) -> CellGraph:
    """Edges ``i -> j`` when the image of point ``i`` is within ``eps + r`` of point ``j``.

    Images are taken under every sequence of sampled controls held constant
    on ``substeps`` equal pieces of ``[0, tau]``.
    """
    eps = 1.5 * mesh.cell_diameter if eps is None else eps
    _check_transition_params(mesh, "center", eps, 0.0, tau)
    if mesh.dim != sys.n + 1:
        raise InputError(f"mesh lives in R^{mesh.dim}, expected R^{sys.n + 1}")
    controls = _control_sample(sys, controls)
    G = sys.lifted_gram
    tree = mesh.tree()
    reach = eps + mesh.cell_radius
    chord = 2 * math.sin(min(reach, math.pi) / 2)
    pieces = [matrix_exponential(sys.lifted_generator(v), tau / substeps) for v in controls]
    maps = [np.eye(sys.n + 1)]
    for _ in range(substeps):
        maps = [P @ M for M in maps for P in pieces]
    rows, cols = [], []
    for Phi in maps:
        img = mesh.points @ Phi.T
        img /= np.sqrt(np.einsum("ij,jk,ik->i", img, G, img))[:, None]
        for i, nb in enumerate(tree.query_ball_point(img, chord)):
            rows.append(np.full(len(nb), i))
            cols.append(np.asarray(nb, dtype=np.int64))
    params = {"tau": tau, "substeps": substeps, "eps": eps, "controls": controls.tolist(), "mode": "center"}
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    pairs = np.unique(np.column_stack([rows, cols]), axis=0)
    return CellGraph(mesh, pairs[:, 0], pairs[:, 1], np.zeros(mesh.size, dtype=bool), params)


def _sccs(graph: CellGraph):
    m = graph.matrix()
    ncomp, labels = connected_components(m, directed=True, connection="strong")
    sizes = np.bincount(labels, minlength=ncomp)
    self_loop = np.zeros(graph.size, dtype=bool)
    loops = graph.rows[graph.rows == graph.cols]
    self_loop[loops] = True
    out = []
    for comp in range(ncomp):
        members = np.flatnonzero(labels == comp)
        if sizes[comp] > 1 or self_loop[members[0]]:
            out.append(members)
    # deterministic order: by smallest cell index
    out.sort(key=lambda c: int(c[0]))
    return out


def _touching_pairs(carrier, label: np.ndarray, cells: np.ndarray):
    if isinstance(carrier, SphereMesh):
        # neighbouring mesh points are at most two covering radii apart
        chord = 2 * math.sin(min(2.2 * carrier.cell_radius, math.pi) / 2)
        tree = cKDTree(carrier.points[cells])
        pairs = tree.query_pairs(chord, output_type="ndarray")
        return label[cells[pairs[:, 0]]], label[cells[pairs[:, 1]]]
    multi = carrier.multi_index(cells)
    N = np.asarray(carrier.cells)
    a, b = [], []
    for off in itertools.product((-1, 0, 1), repeat=carrier.dim):
        if not any(off):
            continue
        nb = multi + np.asarray(off)
        ok = np.all((nb >= 0) & (nb < N), axis=1)
        lab = label[carrier.flat_index(nb[ok])]
        src = label[cells[ok]]
        hit = lab >= 0
        a.append(src[hit])
        b.append(lab[hit])
    return np.concatenate(a), np.concatenate(b)


def _merge_touching(carrier, comps):
    if len(comps) < 2:
        return comps
    label = np.full(carrier.size, -1, dtype=np.int64)
    for k, members in enumerate(comps):
        label[members] = k
    a, b = _touching_pairs(carrier, label, np.concatenate(comps))
    adj = coo_matrix((np.ones(len(a)), (a, b)), shape=(len(comps),) * 2)
    _, group = connected_components(adj, directed=False)
    merged = {}
    for k, g in enumerate(group):
        merged.setdefault(int(g), []).append(comps[k])
    out = [np.sort(np.concatenate(v)) for v in merged.values()]
    out.sort(key=lambda c: int(c[0]))
    return out


def chain_control_sets(
    sys: LinearSystem,
    carrier: Grid | SphereMesh,
    eps: float | None = None,
    tau: float | None = None,
    controls=None,
    pad: float = 0.0,
    mode: str = "enclosure",
    equator_band: float | None = None,
    merge_touching: bool = True,
    substeps: int | None = None,
) -> list:
    """Non-trivial strongly connected components of the cell graph.

    On a sphere mesh every set gets a ``region``: ``"central"`` if it holds
    the cell of a pole, ``"equator"`` if all its points satisfy
    ``|s_{n+1}| <= equator_band`` (default: the fattening radius ``eps + r``
    times 4), otherwise ``"other"``.  Antipodal partners are recorded in
    ``antipode`` (the index of the partner in the returned list, or the
    set's own index when it is symmetric).

    Components whose cells touch (grid neighbours, including diagonal ones,
    or mesh points within two covering radii) are merged when
    ``merge_touching`` is set: a chain may jump one cell diameter, so
    touching recurrent components are chain equivalent.
    """
    if isinstance(carrier, SphereMesh):
        tau = 1.0 if tau is None else tau
        substeps = 1 if substeps is None else substeps
        graph = mesh_graph(sys, carrier, tau, controls, eps, substeps)
    else:
        tau = 1.0 if tau is None else tau
        substeps = 3 if substeps is None else substeps
        graph = grid_graph(sys, carrier, tau, controls, pad, mode, eps, substeps)
    comps = _sccs(graph)
    if merge_touching:
        comps = _merge_touching(carrier, comps)
    sets = []
    for members in comps:
        flags = {int(c): {ESCAPE} for c in members if graph.escape[c]}
        sets.append(SetApproximation("chain_control_set", members, carrier, dict(graph.params), True, flags))
    if isinstance(carrier, SphereMesh):
        _classify_mesh_sets(sets, carrier, graph.params["eps"], equator_band)
    return sets


def _classify_mesh_sets(sets, mesh: SphereMesh, eps, equator_band):
    band = 4 * (eps + mesh.cell_radius) if equator_band is None else equator_band
    tree = mesh.tree()
    pole = np.zeros(mesh.dim)
    pole[-1] = 1.0
    pole_cells = {int(tree.query(pole)[1]), int(tree.query(-pole)[1])}
    if tree.query(pole)[0] > 2 * mesh.cell_radius + 1e-12:
        pole_cells = set()
    anti = tree.query(-mesh.points)[1]
    cellsets = [s.cell_set() for s in sets]
    for i, s in enumerate(sets):
        last = np.abs(s.centers()[:, -1])
        if cellsets[i] & pole_cells:
            s.region = "central"
        elif last.max() <= band:
            s.region = "equator"
        else:
            s.region = "other"
        mirrored = set(int(c) for c in anti[s.cells])
        best, score = None, 0.0
        for j, other in enumerate(cellsets):
            jac = len(mirrored & other) / len(mirrored | other)
            if jac > score:
                best, score = j, jac
        s.antipode = best if score > 0.5 else None


# ---------------------------------------------------------------- sets on the sphere


@dataclass(eq=False)
class SphereSet:
    """Point cloud on the sphere standing for a computed chain set."""

    name: str
    points: np.ndarray
    cell_diameter: float
    region: str

    def distances(self, pts: np.ndarray) -> np.ndarray:
        chord, _ = cKDTree(self.points).query(pts)
        return 2 * np.arcsin(np.minimum(1.0, chord / 2))


def equator_chain_sets(
    sys: LinearSystem,
    spectral: SpectralData,
    level: int = 5,
    circle_points: int = 720,
    tau: float = 1.0,
    eps: float | None = None,
) -> list:
    """Chain sets of the flow on the equator, as :class:`SphereSet` objects.

    For ``n = 2`` the whole equator (a circle) is meshed, for ``n = 3`` an
    icosahedral mesh of the equator is used.  For larger ``n`` the sets are
    computed on the invariant sub-spheres spanned by pairs of Lyapunov spaces
    (of total dimension 2 or 3), which contain every chain set of the
    equator flow.
    """
    n = sys.n
    G = sys.gram
    if n == 1:
        pts = np.array([[1.0, 0.0], [-1.0, 0.0]])
        return [SphereSet(f"equator-{k}", pts[k : k + 1], 0.0, "equator") for k in range(2)]
    if n in (2, 3):
        blocks = [np.eye(n)]
    else:
        blocks = []
        spaces = spectral.spaces
        for i, j in itertools.combinations(range(len(spaces)), 2):
            d = spaces[i].shape[1] + spaces[j].shape[1]
            if d in (2, 3):
                blocks.append(np.hstack([spaces[i], spaces[j]]))
        for i, sp in enumerate(spaces):
            if sp.shape[1] in (2, 3):
                blocks.append(sp)
    out = []
    for k, block in enumerate(blocks):
        # G-orthonormal basis of the block, embedded in the equator
        L = np.linalg.cholesky(block.T @ G @ block)
        basis = block @ np.linalg.inv(L).T
        emb = np.vstack([basis, np.zeros((1, basis.shape[1]))])
        if basis.shape[1] == 2:
            mesh = SphereMesh.circle(circle_points, emb, "circle")
        else:
            mesh = SphereMesh.icosahedral(level, emb)
        for j, s in enumerate(chain_control_sets(sys, mesh, eps, tau)):
            out.append(SphereSet(f"equator-{k}-{j}", s.centers(), mesh.cell_diameter, "equator"))
    return out


def central_sets_on_sphere(
    sys: LinearSystem,
    grid: Grid,
    tau: float = 1.0,
    substeps: int | None = None,
) -> list:
    """Chain sets of an R^n grid carried to the sphere (and to its antipode)."""
    out = []
    G = sys.lifted_gram
    if substeps is None:
        substeps = 3 if grid.dim <= 3 else 1
    for j, s in enumerate(chain_control_sets(sys, grid, tau=tau, substeps=substeps)):
        y = np.hstack([s.centers(), np.ones((len(s), 1))])
        y /= np.sqrt(np.einsum("ij,jk,ik->i", y, G, y))[:, None]
        out.append(SphereSet(f"central-{j}", y, grid.cell_diameter, "central"))
        out.append(SphereSet(f"central-{j}-antipode", -y, grid.cell_diameter, "central"))
    return out


DEFAULT_GRID_CELLS = {1: 201, 2: 201, 3: 31, 4: 15}


def sphere_chain_sets(
    sys: LinearSystem,
    spectral: SpectralData,
    level: int = 5,
    grid: Grid | None = None,
) -> list:
    """All chain sets as :class:`SphereSet` objects: equator sets and central ones.

    For ``n = 2`` both kinds come from one icosahedral mesh of S^2.  For
    larger ``n`` the equator sets come from :func:`equator_chain_sets` and
    the central ones from an R^n grid mapped to the sphere.
    """
    n = sys.n
    if n == 2:
        mesh = SphereMesh.icosahedral(level)
        out = []
        for j, s in enumerate(chain_control_sets(sys, mesh)):
            out.append(SphereSet(f"{s.region}-{j}", s.centers(), mesh.cell_diameter, s.region))
        return out
    if grid is None:
        grid = Grid.cube(n, 2.0, DEFAULT_GRID_CELLS.get(n, 11))
    return equator_chain_sets(sys, spectral, level) + central_sets_on_sphere(sys, grid)


@dataclass
class LimitResult:
    """Classification of a trajectory tail."""

    tail: np.ndarray
    distances: dict
    nearest: str | None
    distance: float
    tolerance: float
    within: bool
    settled: bool
    inconclusive: bool
    matched_circle: int | None = None


def _tail_diameter(tail: np.ndarray) -> float:
    # max distance to the tail's last point bounds the diameter within a factor 2
    chord = np.linalg.norm(tail - tail[-1], axis=1).max()
    return 2 * 2 * math.asin(min(1.0, chord / 2))


def limit_set(
    sys: LinearSystem,
    s0,
    u: ControlSignal,
    sets: list,
    T_tail: float = 10.0,
    T_total: float = 60.0,
    dt: float = 0.1,
    circles=(),
    cells: float = 2.0,
) -> LimitResult:
    """Match the tail ``[T_total - T_tail, T_total]`` of a sphere trajectory.

    ``distances[name]`` is the largest distance from a tail point to the
    set's points.  The tail counts as settled when its diameter is below the
    tolerance or it stays within the tolerance of one of ``circles``; the
    tolerance is ``cells`` times the coarsest cell diameter involved.
    """
    if not T_total > T_tail > 0:
        raise ParameterError("need T_total > T_tail > 0")
    s_start = exact_flow(sys, T_total - T_tail, np.asarray(s0, dtype=float), u)
    times = np.arange(0.0, T_tail + dt / 2, dt)
    tail = sphere_trajectory(sys, s_start, u.shifted(T_total - T_tail), times)
    distances = {s.name: float(s.distances(tail).max()) for s in sets}
    if sets:
        nearest = min(distances, key=distances.get)
        best = next(s for s in sets if s.name == nearest)
        tol = cells * max(best.cell_diameter, 1e-12)
        dist = distances[nearest]
    else:
        nearest, tol, dist = None, 0.0, float("inf")
    matched = None
    for k, c in enumerate(circles):
        if max(c.distance(p, sys.lifted_gram) for p in tail) <= tol:
            matched = k
            break
    settled = _tail_diameter(tail) <= tol or matched is not None
    return LimitResult(
        tail=tail,
        distances=distances,
        nearest=nearest,
        distance=dist,
        tolerance=tol,
        within=dist < tol,
        settled=settled,
        inconclusive=not settled,
        matched_circle=matched,
    )


# ---------------------------------------------------------------- export


def _fmt(x) -> str:
    return format(float(x), ".12g")


def sets_to_csv(sets) -> str:
    """One row per cell: set, index, center coordinates, kind, flags."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not sets:
        writer.writerow(["set", "index", "kind", "flags"])
        return buf.getvalue()
    dim = sets[0].carrier.dim
    writer.writerow(["set", "index"] + [f"c{i + 1}" for i in range(dim)] + ["kind", "region", "flags"])
    for k, s in enumerate(sets):
        centers = s.centers()
        for idx, c in zip(s.cells, centers):
            flags = ";".join(sorted(s.flags.get(int(idx), ())))
            writer.writerow([k, int(idx)] + [_fmt(v) for v in c] + [s.kind, s.region or "", flags])
    return buf.getvalue()
