"""Poincare sphere of a linear control system.

Points of R^n sit on the upper hemisphere through ``x -> (x, 1)/|(x, 1)|``
and the equator ``s_{n+1} = 0`` represents directions at infinity.  The
lifted linear flow on R^{n+1} descends to the sphere by radial projection.

All norms and inner products on R^{n+1} use the lifted Gram matrix
``blockdiag(G, 1)`` of the system (Euclidean unless a Gram matrix is set).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize_scalar

from .errors import DegenerateInputError, InputError, NearEquatorError
from .system import ControlSignal, LinearSystem, lifted_steps

__all__ = [
    "EQUATOR_TOL",
    "SpherePoint",
    "SphereVectorField",
    "EquatorEquilibrium",
    "InvariantCircle",
    "project",
    "chart_to_sphere",
    "sphere_to_chart",
    "sphere_distance",
    "exp_map",
    "sphere_flow",
    "sphere_trajectory",
    "equilibria_at_infinity",
    "return_time",
]

EQUATOR_TOL = 1e-9


def _metric(gram, dim):
    if gram is None:
        return np.eye(dim)
    return np.asarray(gram, dtype=float)


def _norm(y, G) -> float:
    return math.sqrt(max(float(y @ G @ y), 0.0))


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """Unit vector of R^{n+1} with a hemisphere tag."""

    s: np.ndarray
    equator_tol: float = EQUATOR_TOL

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float) + 0.0
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def region(self) -> str:
        last = self.s[-1]
        if last > self.equator_tol:
            return "upper"
        if last < -self.equator_tol:
            return "lower"
        return "equator"

    def __array__(self, dtype=None, copy=None):
        return self.s.astype(dtype) if dtype is not None else self.s.copy()

    def __len__(self):
        return len(self.s)

    def __repr__(self):
        return f"SpherePoint({np.array2string(self.s, precision=6)}, {self.region})"


def project(y, gram=None) -> SpherePoint:
    """Radial projection ``y / |y|`` onto the unit sphere."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise InputError("expected a vector")
    nrm = _norm(y, _metric(gram, y.size))
    if not nrm >= 1e-300:
        raise DegenerateInputError("cannot project a (near) zero vector")
    return SpherePoint(y / nrm)


def chart_to_sphere(x, gram=None) -> SpherePoint:
    """Upper-hemisphere point ``(x, 1)/|(x, 1)|``.

    ``gram`` may be the metric of R^n or the lifted metric of R^{n+1}.
    """
    x = np.asarray(x, dtype=float)
    if gram is not None and np.shape(gram) == (x.size, x.size):
        G = np.eye(x.size + 1)
        G[:-1, :-1] = gram
        gram = G
    return project(np.append(x, 1.0), gram)


def sphere_to_chart(s, equator_tol: float = EQUATOR_TOL) -> np.ndarray:
    """Inverse chart ``(s_1/s_{n+1}, ..., s_n/s_{n+1})``."""
    s = np.asarray(s, dtype=float)
    if abs(s[-1]) <= equator_tol:
        raise NearEquatorError("point is at infinity (on or next to the equator)")
    return s[:-1] / s[-1]


def sphere_distance(a, b, gram=None) -> float:
    """Great-circle distance, via the chord to avoid cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    chord = _norm(a - b, _metric(gram, a.size))
    return 2.0 * math.asin(min(1.0, chord / 2.0))


def exp_map(s, v, gram=None) -> SpherePoint:
    """Retraction ``(s + v)/|s + v|`` used to move off a base point."""
    return project(np.asarray(s, dtype=float) + np.asarray(v, dtype=float), gram)


# ---------------------------------------------------------------- vector field


class SphereVectorField:
    """Induced vector fields ``h_i(s) = A_i s - <A_i s, s> s`` on the sphere.

    ``A_0 = blockdiag(A, 0)`` and ``A_i`` carries the i-th column of ``B`` in
    the last column.  For a control value ``v`` the field is
    ``h_0 + sum_i v_i h_i``.
    """

    def __init__(self, sys: LinearSystem):
        self.sys = sys
        self.G = sys.lifted_gram
        n, m = sys.n, sys.m
        mats = [np.zeros((n + 1, n + 1)) for _ in range(m + 1)]
        mats[0][:n, :n] = sys.A
        for i in range(m):
            mats[i + 1][:n, n] = sys.B[:, i]
        self.matrices = mats

    def generator(self, v) -> np.ndarray:
        return self.sys.lifted_generator(v)

    def field(self, i: int, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        Ms = self.matrices[i] @ s
        return Ms - (s @ self.G @ Ms) * s

    def __call__(self, s, v) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        Ms = self.generator(v) @ s
        return Ms - (s @ self.G @ Ms) * s

    def jacobian_apply(self, s, v, W) -> np.ndarray:
        """Derivative of the field at ``s`` applied to the columns of ``W``."""
        M = self.generator(v)
        GMs = self.G @ (M @ s)
        sGM = (s @ self.G) @ M
        c = s @ GMs
        return M @ W - np.outer(s, GMs @ W + sGM @ W) - c * W


# ---------------------------------------------------------------- integration

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(f, y, h):
    k = []
    for i in range(7):
        yi = y + h * sum((a * kj for a, kj in zip(_A[i], k)), np.zeros_like(y))
        k.append(f(yi))
    y5 = y + h * sum(b * kj for b, kj in zip(_B5, k))
    y4 = y + h * sum(b * kj for b, kj in zip(_B4, k))
    return y5, y5 - y4


def _integrate_piece(field, v, s, W, duration, atol, rtol, h0):
    """Adaptive integration of the sphere field (and its variation) over one piece.

    The step size is controlled by the base point only, so the tangent part
    is propagated by a linear map for a given base trajectory.
    """
    G = field.G
    n1 = s.size
    k = 0 if W is None else W.shape[1]

    def rhs(z):
        base = z[:n1]
        out = np.empty_like(z)
        out[:n1] = field(base, v)
        if k:
            out[n1:] = field.jacobian_apply(base, v, z[n1:].reshape(n1, k)).ravel()
        return out

    z = np.concatenate([s, W.ravel()]) if k else s.copy()
    direction = 1.0 if duration >= 0 else -1.0
    remaining = abs(duration)
    h = min(h0, remaining) if remaining > 0 else 0.0
    while remaining > 1e-15:
        h = min(h, remaining)
        z_new, err = _dp_step(rhs, z, direction * h)
        scale = atol + rtol * np.maximum(np.abs(z[:n1]), np.abs(z_new[:n1]))
        e = float(np.max(np.abs(err[:n1]) / scale))
        if e <= 1.0:
            base = z_new[:n1]
            base = base / _norm(base, G)
            z_new[:n1] = base
            if k:
                Wn = z_new[n1:].reshape(n1, k)
                Wn = Wn - np.outer(base, base @ G @ Wn)
                z_new[n1:] = Wn.ravel()
            z = z_new
            remaining -= h
            factor = 5.0 if e == 0 else min(5.0, 0.9 * e ** (-0.2))
            h = h * max(factor, 0.2)
        else:
            h = h * max(0.2, 0.9 * e ** (-0.2))
            if h < 1e-14:
                raise RuntimeError("step size underflow in sphere integration")
    base = z[:n1]
    return base, (z[n1:].reshape(n1, k) if k else None), h


def intrinsic_flow(
    sys: LinearSystem,
    t: float,
    s0,
    u: ControlSignal,
    W=None,
    atol: float = 1e-10,
    rtol: float = 1e-10,
):
    """Integrate the sphere system directly, optionally with tangent vectors.

    Returns ``(s, W_t)`` with ``W_t`` the variational image of the columns
    of ``W`` (``None`` if ``W`` is ``None``).
    """
    sys.check_signal(u)
    field = SphereVectorField(sys)
    s = np.asarray(s0, dtype=float).copy()
    if W is not None:
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        W = W.copy()
    h = 0.01
    for a, b, v in u.segments(0.0, t):
        s, W, h = _integrate_piece(field, v, s, W, b - a, atol, rtol, max(h, 1e-3))
    return s, W


def exact_flow(sys: LinearSystem, t: float, s0, u: ControlSignal, step: float = 1.0) -> np.ndarray:
    """Sphere flow through the exact lifted transition, rescaled every ``step``."""
    sys.check_signal(u)
    G = sys.lifted_gram
    y = np.asarray(s0, dtype=float).copy()
    for _, Phi in lifted_steps(sys, t, u, step):
        y = Phi @ y
        y = y / _norm(y, G)
    return y


def sphere_flow(
    sys: LinearSystem,
    t: float,
    s0,
    u: ControlSignal,
    backend: str = "exact",
    atol: float = 1e-10,
    rtol: float = 1e-10,
) -> SpherePoint:
    """Point ``pi phi^1(t, s0, u)`` of the sphere system.

    ``backend="exact"`` pushes ``s0`` through the exact lifted transition
    matrices; ``backend="intrinsic"`` integrates the induced vector field with
    an adaptive Dormand-Prince scheme, renormalizing after every step.
    """
    s0 = np.asarray(s0, dtype=float)
    if s0.shape != (sys.n + 1,):
        raise InputError(f"sphere point must have shape ({sys.n + 1},), got {s0.shape}")
    if backend == "exact":
        return SpherePoint(exact_flow(sys, t, s0, u))
    if backend == "intrinsic":
        s, _ = intrinsic_flow(sys, t, s0, u, atol=atol, rtol=rtol)
        return SpherePoint(s)
    raise InputError(f"unknown backend {backend!r}")


def sphere_trajectory(sys: LinearSystem, s0, u: ControlSignal, times) -> np.ndarray:
    """Exact-lift sphere trajectory sampled at increasing ``times`` (from 0)."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise InputError("times must be non-decreasing")
    out = np.empty((len(times), sys.n + 1))
    s = np.asarray(s0, dtype=float)
    t_prev = 0.0
    u_now = u
    for i, t in enumerate(times):
        if t != t_prev:
            s = exact_flow(sys, t - t_prev, s, u_now)
            u_now = u_now.shifted(t - t_prev)
            t_prev = t
        out[i] = s
    return out


# ---------------------------------------------------------------- objects at infinity


@dataclass(frozen=True, eq=False)
class EquatorEquilibrium:
    """Projected real eigendirection ``(v, 0)`` of ``A``."""

    point: SpherePoint
    exponent: float


@dataclass(frozen=True, eq=False)
class InvariantCircle:
    """Great circle of the equator spanned by a complex eigenpair's real plane.

    ``basis`` holds two orthonormal columns in R^{n+1}; ``frequency`` is the
    imaginary part of the eigenvalue and ``exponent`` its real part.
    """

    basis: np.ndarray
    frequency: float
    exponent: float

    def point(self, theta: float) -> np.ndarray:
        return math.cos(theta) * self.basis[:, 0] + math.sin(theta) * self.basis[:, 1]

    def distance(self, s, gram=None) -> float:
        s = np.asarray(s, dtype=float)
        G = _metric(gram, s.size)
        coeffs = self.basis.T @ G @ s
        nrm = float(np.linalg.norm(coeffs))
        if nrm < 1e-15:
            return math.pi / 2
        return sphere_distance(s, self.basis @ (coeffs / nrm), G)


def _g_orthonormal(V: np.ndarray, G: np.ndarray) -> np.ndarray:
    cols = []
    for v in V.T:
        w = v - sum((c @ G @ v) * c for c in cols)
        nrm = _norm(w, G)
        if nrm > 1e-12:
            cols.append(w / nrm)
    return np.array(cols).T


def equilibria_at_infinity(sys: LinearSystem, tol: float = 1e-9):
    """Equilibria and invariant circles of the sphere flow on the equator.

    Returns a list of :class:`EquatorEquilibrium` (both signs of every
    eigenvector in a basis of each real eigenspace) and of
    :class:`InvariantCircle` (one per complex eigenpair).
    """
    A = sys.A
    n = sys.n
    G = sys.gram
    eig = np.linalg.eigvals(A)
    out = []
    real = sorted({round(float(l.real), 9) for l in eig if abs(l.imag) <= tol}, reverse=True)
    for lam in real:
        ns = null_space(A - lam * np.eye(n), rcond=1e-7)
        for v in _g_orthonormal(ns, G).T:
            v = v * np.sign(v[np.argmax(np.abs(v))])
            for sign in (1.0, -1.0):
                out.append(EquatorEquilibrium(SpherePoint(np.append(sign * v, 0.0)), lam))
    pairs = sorted({(round(float(l.real), 9), round(float(l.imag), 9)) for l in eig if l.imag > tol}, reverse=True)
    for re, im in pairs:
        vals, vecs = np.linalg.eig(A)
        j = int(np.argmin(np.abs(vals - complex(re, im))))
        plane = _g_orthonormal(np.column_stack([vecs[:, j].real, vecs[:, j].imag]), G)
        basis = np.vstack([plane, np.zeros((1, plane.shape[1]))])
        out.append(InvariantCircle(basis, im, re))
    return out


def return_time(sys: LinearSystem, s0, u: ControlSignal, t_min: float, t_max: float, samples: int = 400) -> float:
    """Time in ``[t_min, t_max]`` at which the trajectory comes closest to ``s0``."""
    s0 = np.asarray(s0, dtype=float)
    G = sys.lifted_gram
    ts = np.linspace(t_min, t_max, samples)
    traj = sphere_trajectory(sys, s0, u, ts)
    dist = [sphere_distance(p, s0, G) for p in traj]
    i = int(np.argmin(dist))
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, samples - 1)]

    def gap(t):
        d = exact_flow(sys, t, s0, u) - s0
        return float(d @ G @ d)

    res = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return float(res.x)
