"""Randomized property suites.

Each suite draws ``cases`` random instances from a generator seeded with
``seed`` and checks one identity.  Random systems are built as
``A = S J S^{-1}`` with ``J`` block diagonal (real, rotation and Jordan
blocks) and exponents at least 0.5 apart, so every instance has a well
separated spectrum.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import InputError
from .spectral import spectral_decompose
from .sphere import chart_to_sphere, exact_flow, intrinsic_flow, sphere_distance
from .system import Box, LinearSystem, bounded_solution, flow, lifted_flow, random_signal
from .tangent import TangentVector, linearized_cocycle_general, log_growth_series, selgrade_frames

__all__ = ["SuiteResult", "random_system", "SUITES", "run_suites"]

DEFAULT_CASES = 500
DEFAULT_SEED = 20240611


@dataclass
class SuiteResult:
    name: str
    cases: int
    failures: int
    worst: float
    seconds: float
    examples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _blocks(rng, n, exponents):
    J = np.zeros((n, n))
    k = 0
    for lam in exponents:
        left = n - k
        kind = rng.choice(["real", "rotation", "jordan"]) if left >= 2 else "real"
        if kind == "real":
            J[k, k] = lam
            k += 1
        elif kind == "rotation":
            w = rng.uniform(0.5, 2.0)
            J[k : k + 2, k : k + 2] = [[lam, w], [-w, lam]]
            k += 2
        else:
            J[k : k + 2, k : k + 2] = [[lam, 1.0], [0.0, lam]]
            k += 2
        if k >= n:
            break
    while k < n:
        J[k, k] = exponents[-1] - 0.6 * (n - k)
        k += 1
    return J


def random_system(rng: np.random.Generator, n: int | None = None, hyperbolic: bool = False) -> LinearSystem:
    """Random ``x' = Ax + Bu`` with separated Lyapunov exponents, ``U = [-1, 1]^m``."""
    n = int(rng.integers(1, 5)) if n is None else n
    pool = np.arange(-2.0, 2.01, 0.5)
    if hyperbolic:
        pool = pool[pool != 0]
    exponents = sorted(rng.choice(pool, size=min(n, len(pool)), replace=False), reverse=True)
    J = _blocks(rng, n, list(exponents))
    while True:
        S = np.eye(n) + 0.4 * rng.standard_normal((n, n))
        if np.linalg.cond(S) < 20:
            break
    A = S @ J @ np.linalg.inv(S)
    m = int(rng.integers(1, 3))
    B = rng.standard_normal((n, m))
    return LinearSystem(A, B, Box(-np.ones(m), np.ones(m)))


# rounding splits a Jordan block by about sqrt(eps) * |A|; the generated
# exponents are 0.5 apart, so a wider grouping tolerance is safe
GROUP_TOL = 1e-6


def _with_metric(sys: LinearSystem):
    sp = spectral_decompose(sys.A, GROUP_TOL)
    return LinearSystem(sys.A, sys.B, sys.control_range, gram=sp.gram), sp


def _signal(sys, rng, duration=8.0):
    return random_signal(sys.control_range, rng, duration, step=float(rng.uniform(0.3, 1.5)))


def _unit_sphere(rng, d, G=None):
    s = rng.standard_normal(d)
    G = np.eye(d) if G is None else G
    return s / math.sqrt(float(s @ G @ s))


# ---------------------------------------------------------------- properties
# each returns the error measure and the tolerance


def _cocycle(rng):
    sys = random_system(rng)
    u = _signal(sys, rng)
    x = rng.standard_normal(sys.n)
    t, s = rng.uniform(0, 2, size=2)
    direct = flow(sys, t + s, x, u)
    split = flow(sys, t, flow(sys, s, x, u), u.shifted(s))
    return float(np.linalg.norm(direct - split) / max(1.0, np.linalg.norm(direct))), 1e-9


def _ode_reference(sys, t, x, r, u):
    # independent route: adaptive RK on each constant piece
    y = np.asarray(x, dtype=float)
    for a, b, v in u.segments(0.0, t):
        rhs = lambda _, z, v=v: sys.A @ z + r * (sys.B @ v)  # noqa: E731
        y = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=1e-12, atol=1e-12).y[:, -1]
    return y


def _lift_r1(rng):
    sys = random_system(rng)
    u = _signal(sys, rng)
    x = rng.standard_normal(sys.n)
    t = rng.uniform(0, 2)
    st = lifted_flow(sys, t, x, 1.0, u)
    ref = _ode_reference(sys, t, x, 1.0, u)
    err = np.linalg.norm(st.x - ref) / max(1.0, np.linalg.norm(ref)) + abs(st.r - 1.0)
    return float(err), 1e-8


def _lift_r0(rng):
    sys = random_system(rng)
    u = _signal(sys, rng)
    x = rng.standard_normal(sys.n)
    t = rng.uniform(0, 2)
    st = lifted_flow(sys, t, x, 0.0, u)
    ref = expm(sys.A * t) @ x
    err = np.linalg.norm(st.x - ref) / max(1.0, np.linalg.norm(ref)) + abs(st.r)
    return float(err), 1e-9


def _conjugacy(rng):
    sys = random_system(rng)
    u = _signal(sys, rng)
    x = 2 * rng.standard_normal(sys.n)
    t = rng.uniform(0, 2)
    G = sys.lifted_gram
    chart = chart_to_sphere(flow(sys, t, x, u), G).s
    sphere, _ = intrinsic_flow(sys, t, chart_to_sphere(x, G).s, u)
    return sphere_distance(chart, sphere, G), 1e-6


def _normalization(rng):
    sys, _ = _with_metric(random_system(rng))
    u = _signal(sys, rng)
    G = sys.lifted_gram
    s0 = _unit_sphere(rng, sys.n + 1, G)
    t = rng.uniform(0, 5)
    s1, _ = intrinsic_flow(sys, t, s0, u)
    s2 = exact_flow(sys, t, s0, u)
    err = max(abs(math.sqrt(float(s @ G @ s)) - 1.0) for s in (s1, s2))
    return err, 1e-10


def _tangency(rng):
    sys, _ = _with_metric(random_system(rng))
    u = _signal(sys, rng)
    G = sys.lifted_gram
    s0 = _unit_sphere(rng, sys.n + 1, G)
    w = rng.standard_normal(sys.n + 1)
    w -= s0 * float(s0 @ G @ w)
    t = rng.uniform(0, 3)
    out = linearized_cocycle_general(sys, t, s0, u, TangentVector(s0, w))
    nrm = math.sqrt(float(out.vec @ G @ out.vec))
    return abs(float(out.base @ G @ out.vec)) / max(nrm, 1e-300), 1e-8


def _hyperbolic(rng):
    sys, sp = _with_metric(random_system(rng, hyperbolic=True))
    return sys, sp


def _bounded_residual(rng):
    sys, sp = _hyperbolic(rng)
    u = random_signal(sys.control_range, rng, 30.0, 1.0).shifted(-15.0)
    t = rng.uniform(-3, 3)
    e0 = bounded_solution(sys, sp, u, t).value
    e1 = bounded_solution(sys, sp, u, t + 1.0).value
    forced = LinearSystem(sys.A, sp.proj_hyperbolic @ sys.B, sys.control_range)
    pushed = flow(forced, 1.0, e0, u.shifted(t))
    return float(np.linalg.norm(pushed - e1) / max(1.0, np.linalg.norm(e1))), 1e-4


def _green_bound(sys, sp, ds=0.05, horizon=40.0):
    # int_0^inf |exp(As) P_-| + |exp(-As) P_+| ds, trapezoid with a safety factor
    Em = expm(sys.A * ds)
    Ep = expm(-sys.A * ds)
    Pm, Pp = sp.proj_minus.copy(), sp.proj_plus.copy()
    vals = []
    for _ in range(int(horizon / ds) + 1):
        vals.append(np.linalg.norm(Pm, 2) + np.linalg.norm(Pp, 2))
        Pm = Em @ Pm
        Pp = Ep @ Pp
    return 1.05 * ds * (sum(vals) - 0.5 * (vals[0] + vals[-1]))


def _bounded_bound(rng):
    sys, sp = _hyperbolic(rng)
    u = random_signal(sys.control_range, rng, 30.0, 1.0).shifted(-15.0)
    t = rng.uniform(-3, 3)
    e = bounded_solution(sys, sp, u, t).value
    sup_bu = np.linalg.norm(sys.B, 2) * math.sqrt(sys.m)
    bound = _green_bound(sys, sp) * sup_bu
    return float(np.linalg.norm(e) / max(bound, 1e-300)), 1.0


def _bounded_shift(rng):
    sys, sp = _hyperbolic(rng)
    u = random_signal(sys.control_range, rng, 30.0, 1.0).shifted(-15.0)
    t, s = rng.uniform(-3, 3, size=2)
    a = bounded_solution(sys, sp, u.shifted(s), t).value
    b = bounded_solution(sys, sp, u, t + s).value
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b))), 1e-6


def _base_point(rng, sys, sp):
    choices = [k for k in range(len(sp.exponents)) if k != sp.center_index]
    i0 = int(rng.choice(choices))
    basis = sp.spaces[i0]
    x = basis @ rng.standard_normal(basis.shape[1])
    x /= math.sqrt(float(x @ sys.gram @ x))
    return i0, np.append(x, 0.0)


def _dimensions(rng):
    sys, sp = _with_metric(random_system(rng))
    bad = abs(sum(sp.dims()) - sys.n)
    if any(k != sp.center_index for k in range(len(sp.exponents))):
        i0, s = _base_point(rng, sys, sp)
        u = random_signal(sys.control_range, rng, 20.0, 1.0).shifted(-10.0)
        frames = selgrade_frames(sys, sp, i0, s, u)
        basis = np.hstack([f.basis for f in frames])
        bad += abs(basis.shape[1] - sys.n) + abs(np.linalg.matrix_rank(basis, tol=1e-9) - sys.n)
    return float(bad), 0.5


SEPARATION_T = 30.0
# rounding error of the bounded solution is about 1e-11 relative; 15 / gap
# keeps its growth below 1e-4
CENTRAL_BUDGET = 15.0


def _separation(rng):
    # frames with larger theoretical exponents must grow faster; rates are
    # slopes of one log-growth series per frame over [T/2, T]
    while True:
        sys, sp = _with_metric(random_system(rng, n=int(rng.integers(2, 5))))
        if any(k != sp.center_index for k in range(len(sp.exponents))):
            break
    i0, s = _base_point(rng, sys, sp)
    u = random_signal(sys.control_range, rng, 40.0, 1.0).shifted(-10.0)
    frames = selgrade_frames(sys, sp, i0, s, u)
    top = max(f.theoretical_exponent for f in frames)
    series = []
    for f in frames:
        w = f.basis @ rng.standard_normal(f.dim)
        times, logs = log_growth_series(sys, s, u, w, SEPARATION_T, spectral=sp)
        series.append((f, times, logs))
    worst = -math.inf
    for fi, times, li in series:
        for fj, _, lj in series:
            if fi.theoretical_exponent <= fj.theoretical_exponent:
                continue
            T = SEPARATION_T
            for f in (fi, fj):
                # the central frame carries the bounded solution, whose
                # rounding error grows at rate top - exponent
                if f.label == "Vc" and top > f.theoretical_exponent:
                    T = min(T, max(5.0, CENTRAL_BUDGET / (top - f.theoretical_exponent)))
            k = int(np.searchsorted(times, T - 1e-9))
            h = int(np.searchsorted(times, T / 2 - 1e-9))
            span = times[k] - times[h]
            measured = ((li[k] - li[h]) - (lj[k] - lj[h])) / span
            worst = max(worst, -measured)
    return (worst if math.isfinite(worst) else -1.0), 0.0


SUITES = {
    "cocycle": _cocycle,
    "lift-r1": _lift_r1,
    "lift-r0": _lift_r0,
    "conjugacy": _conjugacy,
    "sphere-normalization": _normalization,
    "tangency": _tangency,
    "bounded-residual": _bounded_residual,
    "bounded-boundedness": _bounded_bound,
    "bounded-shift": _bounded_shift,
    "dimension-accounting": _dimensions,
    "exponential-separation": _separation,
}


def run_suites(names=None, cases: int = DEFAULT_CASES, seed: int = DEFAULT_SEED) -> list:
    """Run the named suites (all by default); one :class:`SuiteResult` each."""
    out = []
    keys = list(SUITES)
    unknown = [n for n in names or () if n not in SUITES]
    if unknown:
        raise InputError(f"unknown suite(s) {unknown}; available: {', '.join(keys)}")
    for name in names or keys:
        check = SUITES[name]
        # stream depends on the suite, not on which suites were requested
        rng = np.random.default_rng([seed, keys.index(name)])
        failures, worst, examples = 0, -math.inf, []
        t0 = time.perf_counter()
        for case in range(cases):
            try:
                err, tol = check(rng)
                ok = err <= tol
            except Exception as exc:  # noqa: BLE001
                err, tol, ok = math.inf, math.nan, False
                if len(examples) < 5:
                    examples.append(f"case {case}: {type(exc).__name__}: {exc}")
            worst = max(worst, err)
            if not ok:
                failures += 1
                if len(examples) < 5 and math.isfinite(err):
                    examples.append(f"case {case}: error {err:.3g} > {tol:.3g}")
        out.append(SuiteResult(name, cases, failures, worst, time.perf_counter() - t0, examples))
    return out
