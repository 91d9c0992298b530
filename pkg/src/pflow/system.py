"""Linear control systems with piecewise constant controls.

Solutions are propagated exactly on every interval of constancy by
variation of constants,

    x(t + d) = exp(A d) x(t) + Gamma(d) B v,   Gamma(d) = int_0^d exp(A s) ds,

with ``Gamma`` read off the block exponential of ``[[A, I], [0, 0]]``.
The lifted system on R^{n+1} scales the control term by a frozen extra
coordinate ``r``, which makes its flow linear in ``(x, r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from .errors import InputError, ParameterError, RangeError
from .spectral import SpectralData, lifted_gram, matrix_exponential

__all__ = [
    "Box",
    "Polytope",
    "LinearSystem",
    "ControlSignal",
    "LiftedState",
    "BoundedSolution",
    "flow",
    "lifted_flow",
    "lifted_transition",
    "shift",
    "bounded_solution",
    "lifted_exponent",
    "random_signal",
]


# ---------------------------------------------------------------- control ranges


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``lower <= v <= upper`` of control values."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InputError("box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box bounds must be finite")
        if not np.all(lo < 0) or not np.all(hi > 0):
            raise InputError("0 must lie strictly inside the control range")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def vertices(self) -> np.ndarray:
        m = self.dim
        corners = np.array(np.meshgrid(*[[0, 1]] * m, indexing="ij")).reshape(m, -1).T
        return np.where(corners == 1, self.upper, self.lower)

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def to_dict(self) -> dict:
        return {"box": [self.lower.tolist(), self.upper.tolist()]}


@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex hull of finitely many control values."""

    points: np.ndarray
    _hull: ConvexHull = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] < 2:
            raise InputError("polytope needs an array of points in dimension >= 2; use Box for m = 1")
        if not np.all(np.isfinite(pts)):
            raise InputError("polytope points must be finite")
        try:
            hull = ConvexHull(pts)
        except Exception as exc:
            raise InputError(f"degenerate polytope: {exc}") from None
        if not np.all(hull.equations[:, -1] < -1e-12):
            raise InputError("0 must lie strictly inside the control range")
        object.__setattr__(self, "points", pts[hull.vertices])
        object.__setattr__(self, "_hull", hull)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def vertices(self) -> np.ndarray:
        return self.points.copy()

    def contains(self, v, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        eq = self._hull.equations
        return bool(np.all(eq[:, :-1] @ v + eq[:, -1] <= tol))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        w = rng.dirichlet(np.ones(len(self.points)), size=size)
        return w @ self.points

    def to_dict(self) -> dict:
        return {"polytope": self.points.tolist()}


# ---------------------------------------------------------------- control signals


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise constant control ``u: R -> R^m``.

    Aperiodic signals have ``k`` breakpoints and ``k + 1`` values: value 0
    before the first breakpoint, value ``i`` on ``[b[i-1], b[i])`` and the last
    value after the last breakpoint.  Periodic signals have ``k`` breakpoints
    in ``[0, period)`` starting at 0 and ``k`` values; ``offset`` records the
    accumulated shift so that ``u(t) = pattern((t + offset) mod period)``.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    period: float | None = None
    offset: float = 0.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if b.ndim != 1 or v.ndim != 2:
            raise InputError("breakpoints must be a vector and values a list of vectors")
        if np.any(np.diff(b) <= 0):
            raise InputError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise InputError("control signal must be finite")
        if self.period is None:
            if len(v) != len(b) + 1:
                raise InputError(f"need {len(b) + 1} values for {len(b)} breakpoints, got {len(v)}")
        else:
            p = float(self.period)
            if not p > 0:
                raise InputError("period must be positive")
            if len(b) == 0 or b[0] != 0 or b[-1] >= p:
                raise InputError("periodic breakpoints must start at 0 and lie in [0, period)")
            if len(v) != len(b):
                raise InputError("periodic signals need one value per breakpoint")
            object.__setattr__(self, "period", p)
            object.__setattr__(self, "offset", float(self.offset) % p)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    # constructors
    @classmethod
    def constant(cls, value) -> "ControlSignal":
        return cls(np.zeros(0), np.atleast_1d(np.asarray(value, dtype=float))[None, :])

    @classmethod
    def piecewise(cls, breakpoints, values) -> "ControlSignal":
        return cls(breakpoints, values)

    @classmethod
    def periodic(cls, breakpoints, values, period) -> "ControlSignal":
        return cls(breakpoints, values, period=period)

    @classmethod
    def square_wave(cls, amplitude, period: float) -> "ControlSignal":
        a = np.atleast_1d(np.asarray(amplitude, dtype=float))
        return cls([0.0, period / 2], [a, -a], period=period)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        if self.period is not None:
            tau = (t + self.offset) % self.period
            return self.values[np.searchsorted(self.breakpoints, tau, side="right") - 1].copy()
        return self.values[np.searchsorted(self.breakpoints, t, side="right")].copy()

    def shifted(self, t: float) -> "ControlSignal":
        """The signal ``s -> u(t + s)``."""
        if self.period is not None:
            return ControlSignal(self.breakpoints, self.values, self.period, self.offset + t)
        return ControlSignal(self.breakpoints - t, self.values)

    def switch_times(self, a: float, b: float) -> np.ndarray:
        """Breakpoints strictly inside the interval between ``a`` and ``b``."""
        lo, hi = min(a, b), max(a, b)
        if self.period is None:
            pts = self.breakpoints
        else:
            p = self.period
            base = self.breakpoints - self.offset
            k0 = math.floor((lo - base.max()) / p)
            k1 = math.ceil((hi - base.min()) / p)
            pts = (base[None, :] + p * np.arange(k0, k1 + 1)[:, None]).ravel()
        pts = np.sort(pts[(pts > lo) & (pts < hi)])
        return pts if b >= a else pts[::-1]

    def segments(self, a: float, b: float):
        """Pieces ``(start, end, value)`` of constancy from ``a`` to ``b``."""
        if a == b:
            return []
        knots = np.concatenate([[a], self.switch_times(a, b), [b]])
        return [(s, e, self((s + e) / 2)) for s, e in zip(knots[:-1], knots[1:])]

    def values_in(self, control_range, tol: float = 1e-12) -> bool:
        return all(control_range.contains(v, tol) for v in self.values)

    def to_dict(self) -> dict:
        out = {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}
        if self.period is not None:
            out["period"] = self.period
            out["offset"] = self.offset
        return out

    def __eq__(self, other):
        if not isinstance(other, ControlSignal):
            return NotImplemented
        return (
            self.period == other.period
            and self.offset == other.offset
            and np.array_equal(self.breakpoints, other.breakpoints)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def shift(u: ControlSignal, t: float) -> ControlSignal:
    """Right shift ``(shift(u, t))(s) = u(t + s)``."""
    return u.shifted(t)


def random_signal(control_range, rng: np.random.Generator, duration: float, step: float = 1.0) -> ControlSignal:
    """Piecewise constant signal with independent uniform values on ``[0, duration]``."""
    k = max(1, int(math.ceil(duration / step)))
    breakpoints = step * np.arange(1, k)
    values = control_range.sample(rng, k)
    # constant extension on both sides
    return ControlSignal(breakpoints, values)


# ---------------------------------------------------------------- systems


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``x' = A x + B u`` with ``u(t)`` in a compact convex control range.

    ``gram`` fixes the inner product on R^n used by the sphere and tangent
    computations (identity by default).
    """

    A: np.ndarray
    B: np.ndarray
    control_range: Box | Polytope
    gram: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if B.ndim == 1:
            B = B[:, None]
        if B.ndim != 2 or B.shape[0] != n:
            raise InputError(f"B must have {n} rows, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InputError("A and B must be finite")
        if self.control_range.dim != B.shape[1]:
            raise InputError(
                f"control range has dimension {self.control_range.dim}, B has {B.shape[1]} columns"
            )
        G = np.eye(n) if self.gram is None else np.asarray(self.gram, dtype=float)
        if G.shape != (n, n) or not np.allclose(G, G.T) or np.linalg.eigvalsh(G).min() <= 0:
            raise InputError("gram must be symmetric positive definite")
        for name, val in (("A", A), ("B", B), ("gram", G)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def lifted_gram(self) -> np.ndarray:
        return lifted_gram(self.gram)

    def with_gram(self, gram) -> "LinearSystem":
        return LinearSystem(self.A, self.B, self.control_range, gram)

    def reversed(self) -> "LinearSystem":
        """Time-reversed system ``x' = -A x - B u``."""
        return LinearSystem(-self.A, -self.B, self.control_range, self.gram)

    def lifted_generator(self, v) -> np.ndarray:
        """``[[A, B v], [0, 0]]``, the lifted matrix for the control value ``v``."""
        n = self.n
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = self.A
        M[:n, n] = self.B @ np.asarray(v, dtype=float)
        return M

    def check_signal(self, u: ControlSignal) -> None:
        if u.dim != self.m:
            raise InputError(f"control signal has dimension {u.dim}, expected {self.m}")
        if not u.values_in(self.control_range, 1e-9):
            raise InputError("control signal leaves the control range")

    def control_sample(self) -> np.ndarray:
        """Vertices of the control range together with 0."""
        verts = self.control_range.vertices()
        return np.vstack([verts, np.zeros((1, self.m))])


@dataclass(frozen=True)
class LiftedState:
    """State ``(x, r)`` of the lifted system; ``r`` never changes."""

    x: np.ndarray
    r: float

    def as_vector(self) -> np.ndarray:
        return np.append(self.x, self.r)


# ---------------------------------------------------------------- propagation


@lru_cache(maxsize=8192)
def _exp_and_gamma(A_bytes: bytes, n: int, d: float):
    A = np.frombuffer(A_bytes).reshape(n, n)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A
    M[:n, n:] = np.eye(n)
    big = matrix_exponential(M, d)
    E, Gamma = big[:n, :n].copy(), big[:n, n:].copy()
    E.setflags(write=False)
    Gamma.setflags(write=False)
    return E, Gamma


def exp_and_gamma(A: np.ndarray, d: float):
    """``(exp(A d), int_0^d exp(A s) ds)``, memoized."""
    A = np.ascontiguousarray(A, dtype=float)
    return _exp_and_gamma(A.tobytes(), A.shape[0], float(d))


def lifted_steps(sys: LinearSystem, t: float, u: ControlSignal, max_step: float | None = None, t0: float = 0.0):
    """Yield ``(time, Phi)`` for consecutive pieces from ``t0`` to ``t0 + t``.

    ``Phi`` is the (n+1)x(n+1) transition matrix of the lifted system over the
    piece.  Pieces never straddle a switch of ``u`` and are no longer than
    ``max_step``.
    """
    n = sys.n
    for a, b, v in u.segments(t0, t0 + t):
        length = b - a
        k = 1 if max_step is None else max(1, int(math.ceil(abs(length) / max_step - 1e-12)))
        d = length / k
        E, Gamma = exp_and_gamma(sys.A, d)
        Phi = np.zeros((n + 1, n + 1))
        Phi[:n, :n] = E
        Phi[:n, n] = Gamma @ (sys.B @ v)
        Phi[n, n] = 1.0
        for j in range(k):
            yield (a + (j + 1) * d if j < k - 1 else b), Phi


def lifted_transition(sys: LinearSystem, t: float, u: ControlSignal) -> np.ndarray:
    """Transition matrix of the lifted system from 0 to ``t``."""
    sys.check_signal(u)
    Phi = np.eye(sys.n + 1)
    for time, step in lifted_steps(sys, t, u):
        Phi = step @ Phi
        if not np.all(np.isfinite(Phi)):
            raise RangeError(f"lifted transition overflows near t={time}", time=time)
    return Phi


def _propagate(sys: LinearSystem, t: float, y: np.ndarray, u: ControlSignal) -> np.ndarray:
    sys.check_signal(u)
    with np.errstate(over="ignore", invalid="ignore"):
        for time, Phi in lifted_steps(sys, t, u):
            y = Phi @ y
            if not np.all(np.isfinite(y)):
                raise RangeError(f"state overflows near t={time}", time=time)
    return y


def flow(sys: LinearSystem, t: float, x0, u: ControlSignal) -> np.ndarray:
    """Solution ``phi(t, x0, u)`` of the control system."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise InputError(f"x0 must have shape ({sys.n},), got {x0.shape}")
    return _propagate(sys, t, np.append(x0, 1.0), u)[:-1]


def lifted_flow(sys: LinearSystem, t: float, x0, r: float, u: ControlSignal) -> LiftedState:
    """Solution of the lifted system: ``(exp(At) x0 + r int_0^t exp(A(t-s)) B u(s) ds, r)``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise InputError(f"x0 must have shape ({sys.n},), got {x0.shape}")
    y = _propagate(sys, t, np.append(x0, float(r)), u)
    return LiftedState(y[:-1], float(r))


def renormalized_log_growth(sys: LinearSystem, t: float, y0: np.ndarray, u: ControlSignal, step: float = 1.0):
    """Propagate a lifted vector with rescaling.

    Returns the unit vector ``y(t)/|y(t)|`` (lifted metric) and
    ``log |y(t)| - log |y0|``.
    """
    sys.check_signal(u)
    G = sys.lifted_gram
    y = np.asarray(y0, dtype=float)
    nrm = math.sqrt(y @ G @ y)
    if nrm == 0:
        raise InputError("zero initial condition")
    y = y / nrm
    log_growth = 0.0
    for _, Phi in lifted_steps(sys, t, u, step):
        y = Phi @ y
        c = math.sqrt(y @ G @ y)
        y = y / c
        log_growth += math.log(c)
    return y, log_growth


def lifted_exponent(
    sys: LinearSystem,
    spectral: SpectralData,
    x0,
    r: float,
    u: ControlSignal,
    T: float,
) -> float:
    """Finite-time exponent ``(1/T) log |phi^1(T, x0, r, u)|``.

    The lifted solution is split along the bounded solution,

        phi^1(t) = exp(At)(x0 - r e(u,0)) + r e(u,t) + r int_0^t exp(A(t-s)) P_0 B u(s) ds,

    and only the homogeneous first term is propagated with rescaling.  Without
    the split, rounding errors next to the bounded solution are amplified by
    the unstable directions and dominate the estimate.
    """
    if T < 10:
        raise ParameterError("T must be at least 10")
    x0 = np.asarray(x0, dtype=float)
    r = float(r)
    if not np.any(x0) and r == 0:
        raise InputError("zero initial condition")
    n = sys.n
    G = sys.lifted_gram
    if r == 0 or not np.any(spectral.proj_hyperbolic):
        _, growth = renormalized_log_growth(sys, T, np.append(x0, r), u)
        return (growth + 0.5 * math.log(np.append(x0, r) @ G @ np.append(x0, r))) / T

    e0 = bounded_solution(sys, spectral, u, 0.0).value
    eT = bounded_solution(sys, spectral, u, T).value
    # centre part of the forcing, no exponential instability there
    centre = LinearSystem(sys.A, spectral.proj_center @ sys.B, sys.control_range, sys.gram)
    c = flow(centre, T, np.zeros(n), u) if np.any(spectral.proj_center) else np.zeros(n)
    rest = np.append(r * (eT + c), r)

    d = x0 - r * e0
    if not np.any(d):
        return 0.5 * math.log(rest @ G @ rest) / T
    homogeneous = LinearSystem(sys.A, np.zeros_like(sys.B), sys.control_range, sys.gram)
    y, growth = renormalized_log_growth(homogeneous, T, np.append(d, 0.0), u)
    log_d = growth + 0.5 * math.log(np.append(d, 0.0) @ G @ np.append(d, 0.0))
    if log_d > 600:
        return log_d / T
    total = math.exp(log_d) * y + rest
    return 0.5 * math.log(total @ G @ total) / T


# ---------------------------------------------------------------- bounded solution


@dataclass(frozen=True)
class BoundedSolution:
    """Value of the bounded solution, a bound on the truncation error and a flag."""

    value: np.ndarray
    error_bound: float
    trivial_hyperbolic_part: bool = False
    horizon: float = 0.0


def _tail_constant(A: np.ndarray, P: np.ndarray, H: float, sign: float) -> float:
    """Bound for ``int_H^inf |exp(sign A s) P| ds`` from unit-spaced samples."""
    E1 = P @ matrix_exponential(sign * A, 1.0)
    term = P @ matrix_exponential(sign * A, H)
    total = 0.0
    for _ in range(10_000):
        nrm = np.linalg.norm(term, 2)
        total += nrm
        if nrm <= 1e-18 * max(total, 1e-300) or nrm < 1e-300:
            break
        term = E1 @ term
    return math.exp(np.linalg.norm(A, 2)) * total


def bounded_solution(
    sys: LinearSystem,
    spectral: SpectralData,
    u: ControlSignal,
    t: float = 0.0,
    horizon: float | None = None,
) -> BoundedSolution:
    """Unique bounded solution of ``y' = A pi_h y + pi_h B u`` evaluated at ``t``.

    Uses the dichotomy representation

        e(u, t) = int_{t-H}^t exp(A(t-s)) P_- B u(s) ds - int_t^{t+H} exp(A(t-s)) P_+ B u(s) ds.

    Both integrals are evaluated exactly as solutions of the forced system
    restricted to the stable (forward from ``t - H``) and unstable (backward
    from ``t + H``) parts, projecting after every unit step so that rounding
    errors cannot excite the complementary directions.
    """
    sys.check_signal(u)
    n = sys.n
    if not np.any(spectral.proj_hyperbolic):
        return BoundedSolution(np.zeros(n), 0.0, True, 0.0)
    alpha = spectral.hyperbolic_gap
    H = 40.0 / alpha if horizon is None else float(horizon)
    if not H > 0:
        raise ParameterError("horizon must be positive")

    value = np.zeros(n)
    bound = 0.0
    umax = max(np.linalg.norm(v) for v in sys.control_range.vertices())
    bnorm = np.linalg.norm(sys.B, 2)
    for P, start, direction in (
        (spectral.proj_minus, t - H, 1.0),
        (spectral.proj_plus, t + H, -1.0),
    ):
        if not np.any(P):
            continue
        y = np.zeros(n)
        PB = P @ sys.B
        for a, b, v in u.segments(start, t):
            length = b - a
            k = max(1, int(math.ceil(abs(length) - 1e-12)))
            E, Gamma = exp_and_gamma(sys.A, length / k)
            g = Gamma @ (PB @ v)
            for _ in range(k):
                y = P @ (E @ y + g)
        value += y
        bound += _tail_constant(sys.A, P, H, direction) * bnorm * umax
    return BoundedSolution(value, bound, False, H)
