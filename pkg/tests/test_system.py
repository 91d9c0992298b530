import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from pflow.errors import InputError
from pflow.spectral import spectral_decompose
from pflow.system import (
    Box,
    ControlSignal,
    LinearSystem,
    Polytope,
    bounded_solution,
    flow,
    lifted_exponent,
    lifted_flow,
    random_signal,
    shift,
)

from conftest import make_system

EX1 = make_system([[1.0, 0], [0, -1]], [1.0, 1.0])
DIAG = make_system(np.diag([2.0, 1.0, -1.0]), [1.0, 1.0, 1.0])


def _reference_flow(sys, t, x0, u):
    # independent route: adaptive RK with stops at every switch
    x = np.asarray(x0, dtype=float)
    for a, b, v in u.segments(0.0, t):
        sol = solve_ivp(lambda _, y: sys.A @ y + sys.B @ v, (a, b), x, method="DOP853", rtol=1e-12, atol=1e-12)
        x = sol.y[:, -1]
    return x


def test_box_and_polytope():
    box = Box([-1.0, -2.0], [1.0, 2.0])
    assert box.dim == 2 and len(box.vertices()) == 4
    assert box.contains([0.5, -2.0]) and not box.contains([1.5, 0.0])
    with pytest.raises(InputError):
        Box([0.0], [1.0])
    tri = Polytope(np.array([[-1.0, -1], [1, -1], [0, 1]]))
    assert tri.contains([0.0, 0.0]) and not tri.contains([0.9, 0.9])
    pts = tri.sample(np.random.default_rng(0), 50)
    assert all(tri.contains(p) for p in pts)


def test_system_validation():
    with pytest.raises(InputError):
        make_system(np.eye(2), [1.0, 1.0, 1.0])
    with pytest.raises(InputError):
        make_system([[np.inf]], [1.0])
    with pytest.raises(InputError):
        LinearSystem(np.eye(2), np.ones((2, 2)), Box([-1.0], [1.0]))
    with pytest.raises(InputError):
        make_system(np.eye(2), [1.0, 1.0], gram=-np.eye(2))


def test_signal_evaluation_and_shift():
    u = ControlSignal.piecewise([0.0, 1.0], [[1.0], [2.0], [3.0]])
    assert u(-0.5)[0] == 1.0 and u(0.5)[0] == 2.0 and u(4.0)[0] == 3.0
    v = shift(u, 1.0)
    np.testing.assert_array_equal(v.breakpoints, [-1.0, 0.0])
    for s in np.linspace(-3, 3, 25):
        assert v(s)[0] == u(s + 1.0)[0]
    c = ControlSignal.constant(0.7)
    assert shift(c, 3.2) == c


def test_periodic_shift_by_period_is_pointwise_equal():
    u = ControlSignal.periodic([0.0, 0.3, 1.1], [[1.0], [-0.5], [0.2]], 2.0)
    v = shift(u, 2.0)
    for s in np.linspace(-5, 5, 101):
        assert v(s)[0] == u(s)[0]


def test_signal_validation():
    with pytest.raises(InputError):
        ControlSignal([1.0, 0.0], [[0.0], [1.0], [2.0]])
    with pytest.raises(InputError):
        ControlSignal([0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(InputError):
        ControlSignal.periodic([0.5], [[1.0]], 1.0)


def test_flow_equilibrium(zero):
    for t in (-3.0, 0.0, 2.5):
        np.testing.assert_array_equal(flow(EX1, t, [0.0, 0.0], zero), 0.0)


def test_flow_closed_forms():
    one = ControlSignal.constant(1.0)
    for t in (0.5, 3.0, 20.0):
        x = flow(EX1, t, [0.0, 0.0], one)
        assert x[1] == pytest.approx(1 - math.exp(-t), abs=1e-13)
        assert x[0] == pytest.approx(math.exp(t) - 1, rel=1e-12)
    x = flow(DIAG, 1.0, [0.0, 0.0, 1.0], ControlSignal.constant(0.0))
    np.testing.assert_allclose(x, [0, 0, math.exp(-1)], rtol=1e-14)


def test_flow_matches_independent_integrator():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    sys = make_system(A, rng.normal(size=(3, 2)))
    u = random_signal(sys.control_range, rng, 4.0, step=0.7)
    x0 = rng.normal(size=3)
    np.testing.assert_allclose(flow(sys, 4.0, x0, u), _reference_flow(sys, 4.0, x0, u), rtol=1e-9, atol=1e-9)


def test_lift_at_zero_and_one():
    rng = np.random.default_rng(1)
    u = random_signal(DIAG.control_range, rng, 3.0)
    x0 = rng.normal(size=3)
    r0 = lifted_flow(DIAG, 2.0, x0, 0.0, u)
    np.testing.assert_allclose(r0.x, np.exp([4.0, 2.0, -2.0]) * x0, rtol=1e-13)
    assert r0.r == 0.0
    r1 = lifted_flow(DIAG, 2.0, x0, 1.0, u)
    np.testing.assert_allclose(r1.x, flow(DIAG, 2.0, x0, u), rtol=1e-13)
    assert r1.r == 1.0
    trivial = lifted_flow(make_system(np.zeros((2, 2)), [1.0, 2.0]), 5.0, [0.0, 0.0], 2.0, ControlSignal.constant(0.0))
    np.testing.assert_array_equal(trivial.x, 0.0)
    assert trivial.r == 2.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0), st.floats(-2.0, 2.0))
def test_lift_is_linear_in_the_pair(seed, t, r):
    rng = np.random.default_rng(seed)
    sys = make_system(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)))
    u = random_signal(sys.control_range, rng, 3.0, step=0.5)
    x0 = rng.normal(size=2)
    lifted = lifted_flow(sys, t, x0, r, u)
    expected = r * flow(sys, t, x0 / r, u) if abs(r) > 1e-3 else None
    if expected is not None:
        np.testing.assert_allclose(lifted.x, expected, rtol=1e-8, atol=1e-8)
    assert lifted.r == r


def test_cocycle_identity():
    rng = np.random.default_rng(11)
    sys = make_system(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)))
    u = random_signal(sys.control_range, rng, 6.0, step=0.4)
    x0 = rng.normal(size=3)
    mid = flow(sys, 2.5, x0, u)
    np.testing.assert_allclose(flow(sys, 1.5, mid, shift(u, 2.5)), flow(sys, 4.0, x0, u), rtol=1e-10)


def test_bounded_solution_zero_and_constant(zero):
    sp = spectral_decompose(EX1.A)
    np.testing.assert_allclose(bounded_solution(EX1, sp, zero, 3.0).value, 0.0)
    e = bounded_solution(EX1, sp, ControlSignal.constant(1.0), 0.0).value
    np.testing.assert_allclose(e, [-1.0, 1.0], atol=1e-12)
    # fixed point of the hyperbolic equation
    np.testing.assert_allclose(EX1.A @ e + EX1.B @ [1.0], 0.0, atol=1e-12)


def test_bounded_solution_shift_equivariance():
    sp = spectral_decompose(EX1.A)
    u = ControlSignal.square_wave(1.0, 3.0)
    for t in (0.4, 1.7, 5.0):
        a = bounded_solution(EX1, sp, u, t, horizon=40.0).value
        b = bounded_solution(EX1, sp, shift(u, t), 0.0, horizon=40.0).value
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_bounded_solution_is_a_trajectory():
    sp = spectral_decompose(EX1.A)
    u = ControlSignal.square_wave(1.0, 3.0)
    e0 = bounded_solution(EX1, sp, u, 0.0).value
    e2 = bounded_solution(EX1, sp, u, 2.0).value
    np.testing.assert_allclose(flow(EX1, 2.0, e0, u), e2, atol=1e-6)


def test_lifted_exponents():
    sp = spectral_decompose(DIAG.A)
    zero = ControlSignal.constant(0.0)
    assert lifted_exponent(DIAG, sp, [1.0, 0, 0], 0.0, zero, 50.0) == pytest.approx(2.0, abs=0.01)
    assert lifted_exponent(DIAG, sp, [0, 0, 1.0], 0.0, zero, 50.0) == pytest.approx(-1.0, abs=0.01)
    # the lifted bounded solution has exponent 0
    one = ControlSignal.constant(1.0)
    sp1 = spectral_decompose(EX1.A)
    e = bounded_solution(EX1, sp1, one, 0.0).value
    assert lifted_exponent(EX1, sp1, e, 1.0, one, 50.0) == pytest.approx(0.0, abs=0.05)


def test_reversed_system():
    rev = EX1.reversed()
    np.testing.assert_array_equal(rev.A, -EX1.A)
    np.testing.assert_array_equal(rev.B, -EX1.B)
