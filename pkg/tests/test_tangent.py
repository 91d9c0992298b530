import math

import numpy as np
import pytest

from pflow.acceptance import example_system
from pflow.errors import InputError, ParameterError
from pflow.spectral import spectral_decompose
from pflow.sphere import sphere_flow
from pflow.system import Box, ControlSignal, LinearSystem, random_signal
from pflow.tangent import (
    TangentVector,
    exponent_estimate,
    linearized_cocycle_equator,
    linearized_cocycle_general,
    selgrade_frames,
    stable_convergence_check,
    tangent_project,
    trajectory_gap,
)

ZERO = ControlSignal.constant(0.0)


def _tangent(rng, s):
    v = rng.normal(size=s.size)
    return v - s * (s @ v)


def test_tangent_project_cases():
    y = np.array([0.0, 0.6, 0.8])
    v = np.array([1.0, 0.8, -0.6])
    w = tangent_project(y, v)
    np.testing.assert_allclose(w.base, y)
    np.testing.assert_allclose(w.vec, v)
    np.testing.assert_allclose(tangent_project(y, y).vec, 0.0, atol=1e-15)
    w = tangent_project([0.0, 1.0, 0.0], [1.0, 1.0, 0.0])
    np.testing.assert_allclose(w.base, [0, 1, 0])
    np.testing.assert_allclose(w.vec, [1, 0, 0])


def test_tangent_project_scales_with_the_radius():
    # derivative of y -> y/|y| at |y| = 2
    w = tangent_project([0.0, 2.0, 0.0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(w.vec, [0.5, 0, 0])


def test_equator_cocycle_rejects_normal_direction():
    sys, _ = example_system("example2")
    with pytest.raises(InputError):
        linearized_cocycle_equator(sys, 1.0, [0.0, 1.0, 0.0], ZERO, [0.0, 1.0, 0.0], 0.0)


def test_equator_cocycle_growth_rates():
    sys, _ = example_system("example2")
    x = np.array([0.0, 1.0, 0.0])
    for t in (10.0, 30.0):
        w = linearized_cocycle_equator(sys, t, x, ZERO, [1.0, 0.0, 0.0], 0.0)
        assert math.log(np.linalg.norm(w.vec)) / t == pytest.approx(1.0, abs=1e-12)
        w = linearized_cocycle_equator(sys, t, x, ZERO, [0.0, 0.0, 0.0], 1.0)
        assert math.log(np.linalg.norm(w.vec)) / t == pytest.approx(-1.0, abs=0.05)


def test_general_cocycle_identity_at_time_zero():
    sys, _ = example_system("example1")
    s = np.array([0.3, 0.4, math.sqrt(0.75)])
    w = TangentVector(s, np.array([0.4, -0.3, 0.0]))
    out = linearized_cocycle_general(sys, 0.0, s, ZERO, w)
    np.testing.assert_allclose(out.vec, w.vec, atol=1e-14)


def test_general_cocycle_matches_equator_closed_form():
    rng = np.random.default_rng(0)
    sys, _ = example_system("example5")
    u = random_signal(sys.control_range, rng, 5.0)
    x = rng.normal(size=sys.n)
    x /= np.linalg.norm(x)
    s = np.append(x, 0.0)
    v = _tangent(rng, s)
    closed = linearized_cocycle_equator(sys, 5.0, x, u, v[:-1], v[-1])
    general = linearized_cocycle_general(sys, 5.0, s, u, TangentVector(s, v))
    np.testing.assert_allclose(general.base, closed.base, atol=1e-9)
    np.testing.assert_allclose(general.vec, closed.vec, rtol=1e-5, atol=1e-5 * np.linalg.norm(closed.vec))


def test_general_cocycle_is_linear():
    rng = np.random.default_rng(1)
    sys, _ = example_system("example3")
    u = random_signal(sys.control_range, rng, 3.0)
    s = rng.normal(size=sys.n + 1)
    s /= np.linalg.norm(s)
    w1, w2 = _tangent(rng, s), _tangent(rng, s)
    D = lambda w: linearized_cocycle_general(sys, 3.0, s, u, TangentVector(s, w)).vec
    np.testing.assert_allclose(D(2.0 * w1 - 0.5 * w2), 2.0 * D(w1) - 0.5 * D(w2), atol=1e-8)


def test_variational_and_finite_difference_routes_agree():
    rng = np.random.default_rng(2)
    sys, _ = example_system("example1")
    u = random_signal(sys.control_range, rng, 2.0)
    s = np.array([0.2, -0.5, 0.0])
    s[2] = math.sqrt(1 - s @ s)
    w = TangentVector(s, _tangent(rng, s))
    a = linearized_cocycle_general(sys, 2.0, s, u, w)
    b = linearized_cocycle_general(sys, 2.0, s, u, w, fd_eps=1e-6)
    np.testing.assert_allclose(a.vec, b.vec, atol=1e-4 * max(1.0, np.linalg.norm(a.vec)))


@pytest.mark.parametrize(
    "name, lam0, base, expected",
    [
        ("example2", 1.0, [0, 1.0, 0, 0], {"V1": 1.0, "V3": -2.0, "Vc": -1.0}),
        ("example3", 1.0, [1.0, 0, 0, 0], {"Vi0": 0.0, "Vc": -1.0, "V2": -2.0}),
    ],
)
def test_frames_and_estimates(name, lam0, base, expected):
    sys, sp = example_system(name)
    s = np.array(base)
    frames = selgrade_frames(sys, sp, sp.index_of(lam0), s, ZERO)
    assert {f.label: f.theoretical_exponent for f in frames} == pytest.approx(expected)
    V = np.hstack([f.basis for f in frames])
    # the frames span the tangent space
    assert np.linalg.matrix_rank(V) == sys.n
    np.testing.assert_allclose(s @ sys.lifted_gram @ V, 0.0, atol=1e-12)
    for f in frames:
        for w in f.basis.T:
            est = exponent_estimate(sys, s, ZERO, w, 50.0, "forward", "loglinear", sp)
            assert est == pytest.approx(f.theoretical_exponent, abs=0.05)


def test_example5_frame_labels():
    sys, sp = example_system("example5")
    base = sp.spaces[sp.index_of(1.0)]
    s = np.append(base[:, 0] / math.sqrt(base[:, 0] @ sp.gram @ base[:, 0]), 0.0)
    frames = selgrade_frames(sys, sp, sp.index_of(1.0), s, ZERO)
    assert {f.label: f.theoretical_exponent for f in frames} == pytest.approx(
        {"V1": 1.0, "V3": -2.0, "Vc": -1.0, "Vi0": 0.0}
    )


def test_rotation_central_direction():
    sys, sp = example_system("example4")
    s = np.array([0.0, 1.0, 0.0, 0.0])
    est = exponent_estimate(sys, s, ZERO, [0, 0, 0, 1.0], 50.0, "forward", "loglinear", sp)
    assert est == pytest.approx(-1.0, abs=0.05)


def test_estimator_in_skewed_coordinates():
    # non-orthogonal eigenvectors: plain propagation loses the slow directions
    S = np.array([[1.0, 0.4, -0.3], [0.2, 1.0, 0.5], [-0.6, 0.1, 1.0]])
    A = S @ np.diag([2.0, 1.0, -1.0]) @ np.linalg.inv(S)
    sp = spectral_decompose(A)
    sys = LinearSystem(A, np.ones((3, 1)), Box([-1.0], [1.0]), gram=sp.gram)
    x = sp.spaces[1][:, 0] / math.sqrt(sp.spaces[1][:, 0] @ sp.gram @ sp.spaces[1][:, 0])
    s = np.append(x, 0.0)
    for f in selgrade_frames(sys, sp, 1, s, ZERO):
        w = f.basis[:, 0]
        adapted = exponent_estimate(sys, s, ZERO, w, 50.0, "forward", "loglinear", sp)
        assert adapted == pytest.approx(f.theoretical_exponent, abs=1e-9)
        short_plain = exponent_estimate(sys, s, ZERO, w, 10.0, "forward", "loglinear", sp, adapted=False)
        assert short_plain == pytest.approx(f.theoretical_exponent, abs=1e-6)


def test_estimator_parameters():
    sys, sp = example_system("example2")
    s = np.array([0, 1.0, 0, 0])
    with pytest.raises(ParameterError):
        exponent_estimate(sys, s, ZERO, [1.0, 0, 0, 0], 5.0)
    with pytest.raises(InputError):
        exponent_estimate(sys, s, ZERO, [1.0, 0, 0, 0], 20.0, direction="sideways")
    with pytest.raises(InputError):
        exponent_estimate(sys, s, ZERO, [0, 1.0, 0, 0], 20.0)


def test_backward_estimate_matches_forward_on_constant_coefficients():
    sys, sp = example_system("example2")
    s = np.array([0, 1.0, 0, 0])
    fwd = exponent_estimate(sys, s, ZERO, [1.0, 0, 0, 0], 30.0, "forward", "endpoint", sp)
    bwd = exponent_estimate(sys, s, ZERO, [1.0, 0, 0, 0], 30.0, "backward", "endpoint", sp)
    assert fwd == pytest.approx(1.0, abs=1e-9) and bwd == pytest.approx(1.0, abs=1e-9)


def test_stable_convergence_on_example2():
    sys, sp = example_system("example2")
    rep = stable_convergence_check(sys, sp, sp.index_of(1.0), np.array([0, 1.0, 0, 0]), ZERO, 1e-3, -0.5, 30.0)
    assert rep.converged and rep.monotone and rep.passed
    assert rep.diverged
    assert rep.final_value < 1e-3


def test_zero_offset_gives_zero_distance():
    sys, sp = example_system("example2")
    rep = stable_convergence_check(sys, sp, sp.index_of(1.0), np.array([0, 1.0, 0, 0]), ZERO, delta=0.0)
    np.testing.assert_array_equal(rep.weighted_distance, 0.0)


def test_preimages_diverge_while_sphere_points_merge():
    # two chart points on the same stable fiber of the top eigendirection
    sys, _ = example_system("example1")
    a = np.array([1.0, 0.0, 1.0])
    b = np.array([1.0, 0.5, 1.0])
    times, gaps = trajectory_gap(sys, a, b, ZERO, 20.0)
    assert gaps[-1] < 1e-6 * gaps[0]
    xa = sphere_flow(sys, 20.0, a / np.linalg.norm(a), ZERO)
    assert np.linalg.norm(xa.s[:2] / xa.s[2]) > math.exp(19.0)
