"""Acceptance criteria as runnable checks.

Every ``criterion_<k>`` returns a :class:`CriterionResult`; the numbers they
compare against are the exponents, equilibria and periods that the example
systems have in closed form.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .reach import Grid, chain_control_sets, control_set_D0, limit_set, sphere_chain_sets
from .scenarios import preset
from .spectral import spectral_decompose
from .sphere import EquatorEquilibrium, InvariantCircle, equilibria_at_infinity, return_time, sphere_flow, sphere_trajectory
from .system import ControlSignal, LinearSystem, flow, random_signal
from .tangent import (
    exponent_estimate,
    linearized_cocycle_equator,
    linearized_cocycle_general,
    selgrade_frames,
    stable_convergence_check,
)
from .verify import DEFAULT_CASES, run_suites

__all__ = ["CriterionResult", "CRITERIA", "example_system", "run_acceptance"]

TOL_EXPONENT = 0.05
ZERO = ControlSignal.constant(0.0)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.title} ({self.seconds:.1f} s) {self.detail}"


def example_system(name: str):
    """System of a preset with the adapted metric, and its spectral data."""
    sc = preset(name)
    sp = spectral_decompose(sc.A)
    return LinearSystem(sc.A, sc.B, sc.control_range, gram=sp.gram), sp


def _timed(number, title, fn) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CriterionResult(number, title, bool(passed), detail, time.perf_counter() - t0)


def _exponent_table(sys, sp, lambda0, base_points, expected: dict, T=50.0):
    """Worst deviation of forward and backward estimates from ``expected`` (label -> value)."""
    i0 = sp.index_of(lambda0)
    worst, seen = 0.0, {}
    for s in base_points:
        frames = selgrade_frames(sys, sp, i0, s, ZERO)
        labels = {f.label: f for f in frames}
        if set(labels) != set(expected):
            return math.inf, {"labels": sorted(labels)}
        for label, f in labels.items():
            if abs(f.theoretical_exponent - expected[label]) > 1e-12:
                return math.inf, {"theory": (label, f.theoretical_exponent)}
            for w in f.basis.T:
                for direction in ("forward", "backward"):
                    est = exponent_estimate(sys, s, ZERO, w, T, direction, "loglinear", sp)
                    worst = max(worst, abs(est - expected[label]))
                    seen.setdefault(label, []).append(round(est, 4))
    return worst, seen


def _circle_points(basis: np.ndarray, count: int = 8) -> list:
    return [np.append(math.cos(t) * basis[:, 0] + math.sin(t) * basis[:, 1], 0.0) for t in 2 * math.pi * np.arange(count) / count]


def criterion_1() -> CriterionResult:
    def check():
        sys, sp = example_system("example2")
        # V1: lambda = 2 space, V3: lambda = -1 space
        worst, seen = _exponent_table(sys, sp, 1.0, [np.array([0.0, 1.0, 0.0, 0.0])], {"V1": 1.0, "Vc": -1.0, "V3": -2.0})
        return worst <= TOL_EXPONENT, f"max error {worst:.2e}, estimates {seen}"

    r = _timed(1, "exponents of example 2 at (0,1,0,0)", check)
    if r.seconds >= 5.0:
        r.passed = False
        r.detail += f"; too slow ({r.seconds:.1f} s >= 5 s)"
    return r


def criterion_2() -> CriterionResult:
    def check():
        sys, sp = example_system("example3")
        points = _circle_points(sp.spaces[sp.index_of(1.0)])
        worst, seen = _exponent_table(sys, sp, 1.0, points, {"Vi0": 0.0, "Vc": -1.0, "V2": -2.0})
        ranges = {k: (min(v), max(v)) for k, v in seen.items()}
        return worst <= TOL_EXPONENT, f"max error {worst:.2e} over 8 equator points, ranges {ranges}"

    return _timed(2, "exponents of example 3 on the equator circle", check)


def criterion_3() -> CriterionResult:
    def check():
        sys, sp = example_system("example5")
        # base points along the rotating orbit t -> exp(At) x / |exp(At) x| in the lambda = 1 plane
        x0 = sp.spaces[sp.index_of(1.0)][:, 0]
        points = []
        for t in np.linspace(0.0, 2 * math.pi, 8, endpoint=False):
            x = flow(sys, t, x0, ZERO)
            points.append(np.append(x / math.sqrt(float(x @ sys.gram @ x)), 0.0))
        worst, seen = _exponent_table(sys, sp, 1.0, points, {"V1": 1.0, "Vc": -1.0, "V3": -2.0, "Vi0": 0.0})
        ranges = {k: (min(v), max(v)) for k, v in seen.items()}
        return worst <= TOL_EXPONENT, f"max error {worst:.2e} along the base orbit, ranges {ranges}"

    return _timed(3, "exponents of example 5 along the rotating orbit", check)


def criterion_4() -> CriterionResult:
    def check():
        sys, _ = example_system("example4")
        s0 = np.array([0.0, 1.0, 0.0, 0.0])
        times = np.linspace(0.0, 20.0, 2001)
        traj = sphere_trajectory(sys, s0, ZERO, times)
        dev = max(
            float(np.abs(traj[:, 0] - np.sin(times)).max()),
            float(np.abs(traj[:, 1] - np.cos(times)).max()),
            float(np.abs(traj[:, 2:]).max()),
        )
        T = return_time(sys, s0, ZERO, 5.0, 7.5)
        ok = dev <= 1e-6 and abs(T - 2 * math.pi) <= 1e-3
        return ok, f"max |s - (sin t, cos t, 0, 0)| = {dev:.2e}, return time {T:.9f}"

    return _timed(4, "periodic orbit at infinity of example 4", check)


def criterion_5(samples: int = 200, seed: int = 5) -> CriterionResult:
    def check():
        sys, _ = example_system("example1")
        found = sorted(tuple(np.round(e.point.s, 12)) for e in equilibria_at_infinity(sys) if isinstance(e, EquatorEquilibrium))
        expected = sorted([(1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, -1.0, 0.0)])
        eq_ok = len(found) == 4 and np.allclose(np.array(found) + 0.0, np.array(expected), atol=1e-12)
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(samples):
            s0 = rng.standard_normal(3)
            s0[2] = abs(s0[2])
            s0 /= np.linalg.norm(s0)
            # x1 > 0 tends to (1,0,0); the mirror image tends to (-1,0,0)
            target = np.array([math.copysign(1.0, s0[0]), 0.0, 0.0])
            s = sphere_flow(sys, 100.0, s0, ZERO).s
            worst = max(worst, float(np.linalg.norm(s - target)))
        ok = eq_ok and worst <= 1e-3
        return ok, f"equilibria {'ok' if eq_ok else found}; {samples} trajectories, max distance to (sign x1, 0, 0) at t=100: {worst:.2e}"

    r = _timed(5, "equilibria and attraction at infinity for example 1", check)
    if r.seconds >= 5.0:
        r.passed = False
        r.detail += f"; too slow ({r.seconds:.1f} s >= 5 s)"
    return r


def _brute_force_interval(a: float, b: float, T: float, rng, runs: int = 400, dt: float = 0.25) -> tuple:
    """Range of points reached from 0 by x' = a x + b u within the box [-2, 2].

    Sampled with random piecewise constant controls plus the two constant
    extremes; trajectories are stopped when they leave the box.
    """
    lo = hi = 0.0
    e = math.exp(a * dt)
    g = (e - 1.0) / a if a != 0 else dt
    for k in range(runs + 2):
        if k < 2:
            us = np.full(int(T / dt), (-1.0, 1.0)[k])
        else:
            us = rng.uniform(-1.0, 1.0, int(T / dt))
        x = 0.0
        for u in us:
            x = e * x + g * b * u
            if abs(x) > 2.0:
                break
            lo, hi = min(lo, x), max(hi, x)
    return lo, hi


def d0_oracle(T: float = 20.0, seed: int = 6) -> np.ndarray:
    """Per-axis control set of example 1 from 1-D brute-force simulation."""
    rng = np.random.default_rng(seed)
    out = []
    for a in (1.0, -1.0):
        reach = _brute_force_interval(a, 1.0, T, rng)
        ctrl = _brute_force_interval(-a, -1.0, T, rng)
        out.append([max(reach[0], ctrl[0]), min(reach[1], ctrl[1])])
    return np.array(out)


def criterion_6() -> CriterionResult:
    def check():
        sys, sp = example_system("example1")
        grid = Grid.cube(2, 2.0, 201)
        h = grid.width
        D0 = control_set_D0(sys, sp, grid, 20.0)
        oracle = d0_oracle()
        ext = D0.extent()
        axis_err = np.abs(ext - oracle).max(axis=1) / h
        sets = chain_control_sets(sys, grid)
        zero = grid.index_of(np.zeros(2))
        holder = [s for s in sets if zero in s.cell_set()]
        if not holder:
            return False, "no chain set contains the origin"
        from scipy.spatial import cKDTree

        ia, ib = grid.multi_index(holder[0].cells), grid.multi_index(D0.cells)
        haus = max(cKDTree(ib).query(ia, p=np.inf)[0].max(), cKDTree(ia).query(ib, p=np.inf)[0].max())
        ok = bool(np.all(axis_err <= 1.0)) and haus <= 2
        detail = (
            f"D0 extent {np.round(ext, 4).tolist()} vs oracle {np.round(oracle, 4).tolist()} "
            f"(deviation {np.round(axis_err, 2).tolist()} cells); chain set {len(holder[0])} cells, "
            f"Hausdorff to D0 {int(haus)} cells"
        )
        return ok, detail

    r = _timed(6, "control set and chain control set of example 1", check)
    if r.seconds >= 60.0:
        r.passed = False
        r.detail += f"; too slow ({r.seconds:.1f} s >= 60 s)"
    return r


def criterion_7(cases: int = 100, seed: int = 7) -> CriterionResult:
    def check():
        rng = np.random.default_rng(seed)
        names = [f"example{k}" for k in range(1, 6)]
        worst = 0.0
        for k in range(cases):
            sys, _ = example_system(names[k % 5])
            n = sys.n
            x = rng.standard_normal(n)
            x /= math.sqrt(float(x @ sys.gram @ x))
            v = rng.standard_normal(n)
            v -= x * float(x @ sys.gram @ v)
            v_last = float(rng.standard_normal())
            t = rng.uniform(0.0, 5.0)
            u = random_signal(sys.control_range, rng, 6.0)
            closed = linearized_cocycle_equator(sys, t, x, u, v, v_last)
            fd = linearized_cocycle_general(sys, t, np.append(x, 0.0), u, np.append(v, v_last), fd_eps=1e-6)
            worst = max(worst, float(np.linalg.norm(closed.vec - fd.vec) / np.linalg.norm(closed.vec)))
        return worst <= 1e-4, f"{cases} cases over examples 1-5, max relative error {worst:.2e}"

    return _timed(7, "closed-form linearization vs finite differences", check)


def criterion_8(seeds=range(5)) -> CriterionResult:
    def check():
        sys, sp = example_system("example2")
        s0 = np.array([0.0, 1.0, 0.0, 0.0])
        parts, ok = [], True
        for seed in seeds:
            rep = stable_convergence_check(sys, sp, sp.index_of(1.0), s0, ZERO, 1e-3, -0.5, 30.0, seed=seed)
            norm = float(rep.chart_norms[-1]) if rep.chart_norms is not None else float("nan")
            good = rep.monotone and rep.final_value < 1e-3 and norm > 1e3
            ok &= good
            parts.append(f"seed {seed}: final {rep.final_value:.2e}, monotone {rep.monotone}, |x(30)| {norm:.2e}")
        return ok, "; ".join(parts)

    return _timed(8, "stable-direction convergence for example 2", check)


def criterion_9(cases: int = DEFAULT_CASES) -> CriterionResult:
    def check():
        results = run_suites(cases=cases)
        bad = [f"{r.name}: {r.failures} ({'; '.join(r.examples[:2])})" for r in results if not r.passed]
        summary = ", ".join(f"{r.name} {r.cases - r.failures}/{r.cases}" for r in results)
        return not bad, summary if not bad else "failures: " + " | ".join(bad)

    return _timed(9, f"property suites ({cases} cases each)", check)


def criterion_10(samples: int = 50) -> CriterionResult:
    def check():
        parts, ok = [], True
        for k in range(1, 6):
            sys, sp = example_system(f"example{k}")
            sets = sphere_chain_sets(sys, sp)
            circles = [c for c in equilibria_at_infinity(sys) if isinstance(c, InvariantCircle)]
            rng = np.random.default_rng(100 + k)
            results = []
            for _ in range(samples):
                s0 = rng.standard_normal(sys.n + 1)
                s0 /= math.sqrt(float(s0 @ sys.lifted_gram @ s0))
                u = random_signal(sys.control_range, rng, 60.0, 1.0)
                results.append(limit_set(sys, s0, u, sets, circles=circles))
            inconclusive = sum(r.inconclusive for r in results) / samples
            outside = sum(r.settled and not r.within for r in results)
            ok &= inconclusive < 0.1 and outside == 0
            parts.append(f"example{k}: {len(sets)} sets, inconclusive {inconclusive:.0%}, outside {outside}")
        return ok, "; ".join(parts)

    return _timed(10, "limit sets lie near chain sets", check)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run_acceptance(numbers=None, echo=None, cases: int = DEFAULT_CASES) -> list:
    """Run the selected criteria (all by default); ``echo`` receives each line.

    ``cases`` is the number of random cases per property suite.
    """
    out = []
    for k in numbers or sorted(CRITERIA):
        if k not in CRITERIA:
            raise InputError(f"unknown criterion {k}; have 1-{len(CRITERIA)}")
        r = criterion_9(cases) if k == 9 else CRITERIA[k]()
        out.append(r)
        if echo is not None:
            echo(r.line())
    return out
