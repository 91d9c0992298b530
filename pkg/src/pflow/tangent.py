"""Linearization of the sphere flow and its Lyapunov exponents.

The sphere flow is the radial projection of the linear lifted flow ``Phi``,
so its derivative at ``pi(y)`` applied to ``T_y pi(w)`` is
``T_{Phi y} pi (Phi w)`` with

    T_y pi(v) = |y|^{-1} (v - |y|^{-2} <v, y> y).

Everything below propagates the pair ``(y, w)`` through exact lifted
transition matrices, rescaling both vectors (and removing the component of
``w`` along ``y``, which lies in the kernel) after every unit of time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateInputError, InputError, ParameterError
from .spectral import SpectralData, spectral_decompose
from .sphere import exact_flow, exp_map, intrinsic_flow, project, sphere_to_chart
from .system import ControlSignal, LinearSystem, bounded_solution, flow, lifted_flow, lifted_steps

__all__ = [
    "TangentVector",
    "SubbundleFrame",
    "ConvergenceReport",
    "tangent_project",
    "linearized_cocycle_equator",
    "linearized_cocycle_general",
    "selgrade_frames",
    "stable_growth_bound",
    "log_growth_series",
    "exponent_estimate",
    "trajectory_gap",
    "stable_convergence_check",
    "reparametrized_gap",
]


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Vector ``vec`` tangent to the sphere at ``base``."""

    base: np.ndarray
    vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "vec", np.asarray(self.vec, dtype=float))
        if self.base.shape != self.vec.shape:
            raise InputError("base and vector must have the same shape")

    def defect(self, gram=None) -> float:
        G = np.eye(self.base.size) if gram is None else gram
        return abs(float(self.vec @ G @ self.base))

    def norm(self, gram=None) -> float:
        G = np.eye(self.base.size) if gram is None else gram
        return math.sqrt(float(self.vec @ G @ self.vec))


@dataclass(frozen=True, eq=False)
class SubbundleFrame:
    """Basis of one invariant subbundle at an equator point.

    ``basis`` has shape ``(n+1, d)``; ``label`` is ``"V<k>"`` for the subbundle
    coming from the k-th Lyapunov space (1-based), ``"Vc"`` for the central
    one and ``"Vi0"`` for the complement of the base direction inside its own
    Lyapunov space.
    """

    base: np.ndarray
    label: str
    basis: np.ndarray
    theoretical_exponent: float

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def vectors(self) -> list:
        return [TangentVector(self.base, b) for b in self.basis.T]


def _check_tangent(base, vec, G, tol=1e-9):
    base = np.asarray(base, dtype=float)
    vec = np.asarray(vec, dtype=float)
    if abs(float(base @ G @ base) - 1.0) > 1e-8:
        raise InputError("base point is not on the unit sphere")
    if abs(float(vec @ G @ base)) > tol * max(1.0, math.sqrt(float(vec @ G @ vec))):
        raise InputError("vector is not tangent at the base point")
    return base, vec


def tangent_project(y, v, gram=None) -> TangentVector:
    """``(pi(y), |y|^{-1} (v - |y|^{-2} <v, y> y))``."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    G = np.eye(y.size) if gram is None else np.asarray(gram, dtype=float)
    ny = math.sqrt(max(float(y @ G @ y), 0.0))
    if not ny >= 1e-300:
        raise DegenerateInputError("cannot project at a (near) zero vector")
    ny2 = ny * ny
    vec = (v - (float(v @ G @ y) / ny2) * y) / ny
    return TangentVector(project(y, G).s, vec)


# ---------------------------------------------------------------- propagation core


def _pair_steps(sys: LinearSystem, t: float, u: ControlSignal, y, W, step: float = 1.0):
    """Yield ``(time, y_hat, W_perp, log_y, log_W)`` after each piece.

    ``y`` is kept at unit length and the columns of ``W`` are kept
    perpendicular to ``y`` and rescaled by a common factor; the true vectors
    are ``exp(log_y) y_hat`` and ``exp(log_W) W_perp`` (up to kernel
    components).
    """
    G = sys.lifted_gram
    y = np.asarray(y, dtype=float).copy()
    W = np.asarray(W, dtype=float).copy()
    ny = math.sqrt(float(y @ G @ y))
    y /= ny
    log_y = math.log(ny)
    W = W - np.outer(y, y @ G @ W)
    nw = math.sqrt(max(float(np.sum(W * (G @ W))), 0.0))
    log_w = 0.0
    if nw > 0:
        W /= nw
        log_w = math.log(nw)
    for time, Phi in lifted_steps(sys, t, u, step):
        y = Phi @ y
        c = math.sqrt(float(y @ G @ y))
        y /= c
        log_y += math.log(c)
        W = Phi @ W
        W = W - np.outer(y, y @ G @ W)
        cw = math.sqrt(max(float(np.sum(W * (G @ W))), 0.0))
        if cw > 0:
            W /= cw
            log_w += math.log(cw)
        yield time, y, W, log_y, log_w


def linearized_cocycle_equator(sys: LinearSystem, t: float, x, u: ControlSignal, v, v_last: float) -> TangentVector:
    """Derivative of the sphere flow at the equator point ``(x, 0)``.

    With ``a = exp(At) x`` and ``b = exp(At) v + v_last int_0^t exp(A(t-s)) B u(s) ds``
    the image of ``(v, v_last)`` is

        (b, v_last)/|a| - (a, 0) <b, a>/|a|^3.

    ``a`` and ``(b, v_last)`` are propagated together and rescaled by the same
    factor, which leaves the formula unchanged.
    """
    n = sys.n
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != (n,) or v.shape != (n,):
        raise InputError(f"x and v must have shape ({n},)")
    G = sys.gram
    s = np.append(x, 0.0)
    _check_tangent(s, np.append(v, v_last), sys.lifted_gram)
    a = s.copy()
    bw = np.append(v, float(v_last))
    for _, Phi in lifted_steps(sys, t, u, 1.0):
        a = Phi @ a
        bw = Phi @ bw
        c = math.sqrt(float(a[:n] @ G @ a[:n]))
        a /= c
        bw /= c
    na = math.sqrt(float(a[:n] @ G @ a[:n]))
    b = bw[:n]
    first = bw / na
    second = np.append(a[:n], 0.0) * (float(b @ G @ a[:n]) / na**3)
    return TangentVector(a / na, first - second)


def linearized_cocycle_general(
    sys: LinearSystem,
    t: float,
    s,
    u: ControlSignal,
    w: TangentVector,
    fd_eps: float | None = None,
    atol: float = 1e-12,
    rtol: float = 1e-12,
) -> TangentVector:
    """Derivative of the sphere flow at any point, applied to ``w``.

    By default the variational equation is integrated alongside the
    intrinsic integrator.  With ``fd_eps`` set, a central finite difference
    of the exact-lift flow along the retraction ``s +- fd_eps w`` is returned
    instead (a verification mode).
    """
    s = np.asarray(s, dtype=float)
    G = sys.lifted_gram
    vec = np.asarray(w.vec if isinstance(w, TangentVector) else w, dtype=float)
    _check_tangent(s, vec, G)
    if fd_eps is not None:
        plus = exact_flow(sys, t, exp_map(s, fd_eps * vec, G).s, u)
        minus = exact_flow(sys, t, exp_map(s, -fd_eps * vec, G).s, u)
        base = exact_flow(sys, t, s, u)
        d = (plus - minus) / (2 * fd_eps)
        return TangentVector(base, d - base * float(base @ G @ d))
    base, W = intrinsic_flow(sys, t, s, u, vec[:, None], atol=atol, rtol=rtol)
    return TangentVector(base, W[:, 0])


# ---------------------------------------------------------------- Selgrade frames


def _g_complement(Q: np.ndarray, x: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the G-orthogonal complement of ``x`` in span(Q)."""
    cols = [x / math.sqrt(float(x @ G @ x))]
    out = []
    for q in Q.T:
        r = q - sum(float(c @ G @ q) * c for c in cols)
        nrm = math.sqrt(max(float(r @ G @ r), 0.0))
        if nrm > 1e-8:
            cols.append(r / nrm)
            out.append(r / nrm)
    return np.array(out).T if out else np.zeros((len(x), 0))


def selgrade_frames(
    sys: LinearSystem,
    spectral: SpectralData,
    i0: int,
    s,
    u: ControlSignal,
) -> list:
    """Bases of the invariant subbundles at the equator point ``s = (x, 0)``.

    ``x`` must be a unit vector of the Lyapunov space ``spectral.spaces[i0]``
    and ``exponents[i0]`` must be nonzero.  The frames are

    * ``V<k>``: ``(w, 0)`` for ``w`` in the k-th Lyapunov space (k != i0, nonzero
      exponent), exponent ``lambda_k - lambda_i0``;
    * ``Vi0``: complement of ``x`` inside its own space, exponent 0;
    * ``Vc``: ``(e - <e, x> x, 1)`` with the bounded solution ``e = e(u, 0)``
      plus ``(y, 0)`` for ``y`` in the center space, exponent ``-lambda_i0``.
    """
    n = sys.n
    G = sys.gram
    s = np.asarray(s, dtype=float)
    if s.shape != (n + 1,):
        raise InputError(f"base point must have shape ({n + 1},)")
    lam0 = spectral.exponents[i0]
    if lam0 == 0:
        raise InputError("the base exponent must be nonzero")
    if abs(s[n]) > 1e-9:
        raise InputError("base point must lie on the equator")
    x = s[:n]
    if abs(float(x @ G @ x) - 1.0) > 1e-8:
        raise InputError("base direction must be a unit vector")
    resid = x - spectral.projection(i0) @ x
    if np.linalg.norm(resid) > 1e-8:
        raise InputError(f"base direction is not in the Lyapunov space of {lam0} (residual {np.linalg.norm(resid):.3g})")
    if not np.allclose(G, spectral.gram, atol=1e-12):
        raise InputError("system Gram matrix must be the adapted one of the spectral data")

    frames = []
    for k, lam in enumerate(spectral.exponents):
        if k == i0 or k == spectral.center_index:
            continue
        basis = np.vstack([spectral.spaces[k], np.zeros((1, spectral.spaces[k].shape[1]))])
        frames.append(SubbundleFrame(s, f"V{k + 1}", basis, lam - lam0))

    comp = _g_complement(spectral.spaces[i0], x, G)
    if comp.shape[1]:
        frames.append(SubbundleFrame(s, "Vi0", np.vstack([comp, np.zeros((1, comp.shape[1]))]), 0.0))

    e0 = bounded_solution(sys, spectral, u, 0.0).value
    central = [np.append(e0 - float(e0 @ G @ x) * x, 1.0)]
    for y in spectral.center_basis.T:
        central.append(np.append(y - float(y @ G @ x) * x, 0.0))
    frames.append(SubbundleFrame(s, "Vc", np.array(central).T, -lam0))
    return frames


def stable_growth_bound(frames) -> float:
    """Largest theoretical exponent among the contracting frames."""
    neg = [f.theoretical_exponent for f in frames if f.theoretical_exponent < 0]
    if not neg:
        raise InputError("no contracting subbundle")
    return max(neg)


# ---------------------------------------------------------------- exponents


def _block_coordinates(sys: LinearSystem, spectral: SpectralData | None):
    """The system in coordinates adapted to the Lyapunov splitting, or ``None``.

    Off-diagonal blocks of ``V^{-1} A V`` are rounding noise and are set to
    exactly zero, so the transition matrices keep every Lyapunov space
    invariant to the last bit.  Without this, rounding leaks the fastest
    growth into slow directions once their relative size drops below
    machine precision.
    """
    if spectral is None:
        try:
            spectral = spectral_decompose(sys.A)
        except InputError:
            return None
    V = np.hstack(spectral.spaces)
    if np.linalg.cond(V) > 1e6:
        return None
    Vinv = np.linalg.inv(V)
    sizes = [b.shape[1] for b in spectral.spaces]
    mask = np.zeros((sys.n, sys.n), dtype=bool)
    k = 0
    for d in sizes:
        mask[k : k + d, k : k + d] = True
        k += d
    A = np.where(mask, Vinv @ sys.A @ V, 0.0)
    G = np.where(mask, V.T @ sys.gram @ V, 0.0)
    G = (G + G.T) / 2
    T = np.eye(sys.n + 1)
    T[: sys.n, : sys.n] = Vinv
    slices = [slice(a, b) for a, b in zip(np.cumsum([0] + sizes[:-1]), np.cumsum(sizes))]
    return LinearSystem(A, Vinv @ sys.B, sys.control_range, gram=G), T, slices


def _snap(v: np.ndarray, slices, rel: float = 1e-12) -> np.ndarray:
    # block components at rounding level of the coordinate change are zero
    v = v.copy()
    scale = np.linalg.norm(v)
    for sl in slices:
        if np.linalg.norm(v[sl]) <= rel * scale:
            v[sl] = 0.0
    return v


def log_growth_series(
    sys: LinearSystem,
    s,
    u: ControlSignal,
    w,
    T: float,
    step: float = 1.0,
    spectral: SpectralData | None = None,
    adapted: bool = True,
):
    """Times and ``log |D(t) w|`` sampled every ``step`` up to ``T`` (either sign).

    With ``adapted`` set the pair is propagated in coordinates adapted to
    the Lyapunov splitting (computed from ``spectral`` or from ``sys.A``),
    which changes the norm only by a bounded factor.
    """
    s = np.asarray(s, dtype=float)
    vec = np.asarray(w.vec if isinstance(w, TangentVector) else w, dtype=float)
    G = sys.lifted_gram
    _check_tangent(s, vec, G)
    nrm = math.sqrt(float(vec @ G @ vec))
    if nrm == 0:
        raise InputError("zero tangent vector")
    blocks = _block_coordinates(sys, spectral) if adapted else None
    if blocks is not None:
        sys, M, slices = blocks
        G = sys.lifted_gram
        s = _snap(M @ s, slices)
        vec = _snap(M @ vec, slices)
        vec = vec - s * float(s @ G @ vec) / float(s @ G @ s)
        nrm = math.sqrt(float(vec @ G @ vec)) / math.sqrt(float(s @ G @ s))
    times = [0.0]
    logs = [math.log(nrm)]
    for time, yh, Wh, ly, lw in _pair_steps(sys, T, u, s, vec[:, None], step):
        wn = math.sqrt(max(float(Wh[:, 0] @ G @ Wh[:, 0]), 0.0))
        times.append(time)
        logs.append(lw - ly + (math.log(wn) if wn > 0 else -np.inf))
    return np.array(times), np.array(logs)


def _fit_loglinear(times, logs):
    t = np.abs(times)
    keep = (t >= t.max() / 2) & (t > 0) & np.isfinite(logs)
    X = np.column_stack([t[keep], np.log(t[keep]), np.ones(keep.sum())])
    coef, *_ = np.linalg.lstsq(X, logs[keep], rcond=None)
    return float(coef[0])


def exponent_estimate(
    sys: LinearSystem,
    s,
    u: ControlSignal,
    w,
    T: float,
    direction: str = "forward",
    method: str = "endpoint",
    spectral: SpectralData | None = None,
    adapted: bool = True,
) -> float:
    """Finite-time Lyapunov exponent of the linearized sphere flow.

    ``method="endpoint"`` returns ``(1/T) log(|D(T) w|/|w|)``.
    ``method="loglinear"`` fits ``log |D(t) w| ~ lam t + p log t + c`` over
    unit samples in ``[T/2, T]`` and returns ``lam``; this removes the
    polynomial prefactors that come with non-trivial Jordan blocks.
    Backward exponents use ``t -> -T``.  ``spectral`` and ``adapted`` are
    passed to :func:`log_growth_series`.
    """
    if T < 10:
        raise ParameterError("T must be at least 10")
    if direction not in ("forward", "backward"):
        raise InputError("direction must be 'forward' or 'backward'")
    horizon = T if direction == "forward" else -T
    times, logs = log_growth_series(sys, s, u, w, horizon, spectral=spectral, adapted=adapted)
    if method == "endpoint":
        return float((logs[-1] - logs[0]) / horizon)
    if method == "loglinear":
        lam = _fit_loglinear(times, logs)
        return lam if direction == "forward" else -lam
    raise InputError(f"unknown method {method!r}")


# ---------------------------------------------------------------- stable directions


def trajectory_gap(sys: LinearSystem, a, b, u: ControlSignal, T: float, step: float = 1.0):
    """Sphere distance between ``pi Phi(t) a`` and ``pi Phi(t) b`` at unit times.

    The lifted flow is linear, so the difference ``Phi(t)(a - b)`` is
    propagated directly; the angle between the two lifted vectors is then
    computed without cancellation.
    """
    G = sys.lifted_gram
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    times = [0.0]
    gaps = [_angle(b, diff, G)]
    if not np.any(diff):
        for time, *_ in lifted_steps(sys, T, u, step):
            times.append(time)
            gaps.append(0.0)
        return np.array(times), np.array(gaps)
    nb = math.sqrt(float(b @ G @ b))
    for time, Phi_y, Phi_d in _track(sys, T, u, b / nb, diff / nb, step):
        times.append(time)
        gaps.append(_angle(Phi_y, Phi_d, G))
    return np.array(times), np.array(gaps)


def _angle(y, d, G) -> float:
    """Angle between ``y`` and ``y + d``."""
    ny = math.sqrt(float(y @ G @ y))
    par = float(d @ G @ y) / ny
    perp_vec = d - (par / ny) * y
    perp = math.sqrt(max(float(perp_vec @ G @ perp_vec), 0.0))
    return math.atan2(perp, ny + par)


def _track(sys, T, u, y, d, step):
    """Propagate ``y`` and ``d`` with a common rescaling so ``y`` stays unit."""
    G = sys.lifted_gram
    y = y.copy()
    d = d.copy()
    for time, Phi in lifted_steps(sys, T, u, step):
        y = Phi @ y
        d = Phi @ d
        c = math.sqrt(float(y @ G @ y))
        y /= c
        d /= c
        yield time, y, d


@dataclass
class ConvergenceReport:
    """Outcome of a stable-direction convergence experiment."""

    times: np.ndarray
    weighted_distance: np.ndarray
    alpha: float
    kappa: float
    delta: float
    seed: int | None
    seed_point: np.ndarray
    monotone: bool
    final_value: float
    converged: bool
    inconclusive: bool
    chart_norms: np.ndarray | None = None
    diverged: bool | None = None
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.converged and self.diverged is not False


def _summarize(times, d, alpha, burn_in, threshold):
    weighted = np.exp(-alpha * times) * d
    tail = weighted[times >= burn_in]
    monotone = bool(np.all(np.diff(tail) <= 1e-12 * tail[:-1]))
    final = float(weighted[-1])
    return weighted, monotone, final, monotone and final < threshold


def _chart_norms(sys, s, u, times):
    if s[-1] <= 1e-9:
        return None
    z = sphere_to_chart(s)
    out = []
    prev = 0.0
    u_now = u
    for t in times:
        z = flow(sys, t - prev, z, u_now) if t != prev else z
        u_now = u_now.shifted(t - prev)
        prev = t
        out.append(float(np.linalg.norm(z)))
    return np.array(out)


def stable_convergence_check(
    sys: LinearSystem,
    spectral: SpectralData,
    i0: int,
    s0,
    u: ControlSignal,
    delta: float = 1e-3,
    alpha: float = -0.5,
    T: float = 30.0,
    frames=None,
    seed: int = 0,
    burn_in: float = 5.0,
    threshold: float = 1e-3,
    escape_norm: float = 1e3,
) -> ConvergenceReport:
    """Seed a point on the stable fiber of ``s0`` and watch it converge.

    The seed is ``exp_map(s0, delta w)`` for a random unit combination ``w``
    of the contracting frames (sign chosen so that the seed lies in the upper
    hemisphere when possible).  Reports ``exp(-alpha t) d(t)`` at unit times
    and, for an upper-hemisphere seed, the norm of the corresponding
    solution in R^n.
    """
    if spectral.exponents[i0] <= 0:
        raise ParameterError("the base exponent must be positive")
    if frames is None:
        frames = selgrade_frames(sys, spectral, i0, s0, u)
    kappa = stable_growth_bound(frames)
    if not (kappa < alpha < 0):
        raise ParameterError(f"alpha must lie in ({kappa}, 0)")
    G = sys.lifted_gram
    s0 = np.asarray(s0, dtype=float)
    basis = np.hstack([f.basis for f in frames if f.theoretical_exponent < 0])
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(basis.shape[1])
    w = basis @ c
    w /= math.sqrt(float(w @ G @ w))
    if w[-1] < 0:
        w = -w
    seed_point = exp_map(s0, delta * w, G).s
    times, d = trajectory_gap(sys, seed_point, s0, u, T)
    weighted, monotone, final, converged = _summarize(times, d, alpha, burn_in, threshold)
    norms = _chart_norms(sys, seed_point, u, times)
    report = ConvergenceReport(
        times=times,
        weighted_distance=weighted,
        alpha=alpha,
        kappa=kappa,
        delta=delta,
        seed=seed,
        seed_point=seed_point,
        monotone=monotone,
        final_value=final,
        converged=converged,
        inconclusive=not monotone,
        chart_norms=norms,
        diverged=None if norms is None else bool(norms[-1] > escape_norm),
    )
    if not monotone:
        report.notes.append("weighted distance not monotone after burn-in; seed may be too far out")
    return report


def reparametrized_gap(sys: LinearSystem, z1, z2, u: ControlSignal, t: float, t_max: float | None = None):
    """Check the norm-matched comparison of two diverging solutions.

    Finds ``t'`` with ``|phi^1(t', z2, 1)| = |phi^1(t, z1, 1)|`` by bisection and
    returns ``(t', lhs, rhs)`` where ``lhs = |phi(t, z1) - phi(t', z2)|`` and
    ``rhs = |phi^1(t, z1, 1)| d(pi phi^1(t, z1), pi phi^1(t', z2))``; the
    inequality ``lhs <= rhs`` is expected.
    """
    G = sys.lifted_gram
    target = lifted_flow(sys, t, z1, 1.0, u).as_vector()
    level = math.sqrt(float(target @ G @ target))

    def gap(tp):
        y = lifted_flow(sys, tp, z2, 1.0, u).as_vector()
        return math.sqrt(float(y @ G @ y)) - level

    hi = t_max if t_max is not None else 2 * t + 10
    tp = brentq(gap, 0.0, hi, xtol=1e-12) if gap(0.0) * gap(hi) < 0 else (0.0 if abs(gap(0.0)) < 1e-12 else float("nan"))
    other = lifted_flow(sys, tp, z2, 1.0, u).as_vector()
    lhs = float(np.linalg.norm(target[:-1] - other[:-1]))
    a = target / level
    b = other / math.sqrt(float(other @ G @ other))
    chord = math.sqrt(float((a - b) @ G @ (a - b)))
    rhs = level * 2.0 * math.asin(min(1.0, chord / 2))
    return tp, lhs, rhs
