import math

import numpy as np
import pytest

from pflow.acceptance import example_system
from pflow.errors import InputError, ParameterError
from pflow.reach import (
    Grid,
    SphereMesh,
    chain_control_sets,
    control_set_D0,
    controllable_set,
    equator_chain_sets,
    limit_set,
    reachable_set,
    sets_to_csv,
    sphere_chain_sets,
    support_function,
)
from pflow.spectral import spectral_decompose
from pflow.sphere import chart_to_sphere, equilibria_at_infinity, sphere_trajectory
from pflow.system import ControlSignal

from conftest import make_system

ZERO = ControlSignal.constant(0.0)
EX1 = make_system([[1.0, 0], [0, -1]], [1.0, 1.0])
GRID = Grid.cube(2, 2.0, 41)


def _cells_equal_within(a, b, grid, k=1):
    # every cell of a has a cell of b within k cells (Chebyshev) and vice versa
    ma, mb = grid.multi_index(a), grid.multi_index(b)
    d1 = np.abs(ma[:, None, :] - mb[None, :, :]).max(axis=2).min(axis=1).max()
    d2 = np.abs(mb[:, None, :] - ma[None, :, :]).max(axis=2).min(axis=1).max()
    return max(d1, d2) <= k


def test_grid_indexing():
    g = Grid.cube(3, 1.0, 5)
    assert g.size == 125 and g.dim == 3
    idx = np.arange(g.size)
    np.testing.assert_array_equal(g.flat_index(g.multi_index(idx)), idx)
    for i in (0, 17, 124):
        assert g.index_of(g.centers([i])[0]) == i
    assert g.cell_diameter == pytest.approx(math.sqrt(3) * 0.4)
    with pytest.raises(InputError):
        g.index_of([5.0, 0.0, 0.0])


def test_sphere_meshes():
    mesh = SphereMesh.icosahedral(3)
    np.testing.assert_allclose(np.linalg.norm(mesh.centers(), axis=1), 1.0)
    # every sphere point lies within the covering radius of a mesh point
    probe = np.random.default_rng(0).normal(size=(500, 3))
    probe /= np.linalg.norm(probe, axis=1, keepdims=True)
    assert mesh.tree().query(probe)[0].max() <= mesh.cell_radius + 1e-12
    circle = SphereMesh.circle(36)
    assert circle.size == 36 and circle.index_of([1.0, 0.0]) == 0


def test_no_control_gives_the_trajectory_tube():
    sys = make_system([[-1.0, 0], [0, -2]], [0.0, 0.0])
    x0 = np.array([1.5, 1.0])
    traj = np.array([np.exp([-t, -2 * t]) * x0 for t in np.linspace(0, 5, 501)])
    tube = {GRID.index_of(x) for x in traj}
    assert tube <= reachable_set(sys, GRID, x0, 5.0).cell_set()
    # short steps wrap by a few cells; long steps stay within a cell of the path
    R = reachable_set(sys, GRID, x0, 5.0, tau=1.0)
    assert tube <= R.cell_set()
    dist = np.min(np.linalg.norm(GRID.centers(R.cells)[:, None, :] - traj[None], axis=2), axis=1)
    assert dist.max() <= GRID.cell_diameter


def test_example1_reach_and_controllable_extents():
    R = reachable_set(EX1, GRID, [0.0, 0.0], 20.0)
    lo, hi = R.extent()[1]
    h = GRID.width[1]
    assert abs(lo + 1) <= h and abs(hi - 1) <= h
    assert R.escapes
    C = controllable_set(EX1, GRID, [0.0, 0.0], 20.0)
    lo, hi = C.extent()[0]
    assert abs(lo + 1) <= h and abs(hi - 1) <= h


def test_integrator_reaches_the_box():
    sys = make_system(np.zeros((2, 2)), np.eye(2))
    h = GRID.width[0]
    # support route
    R = reachable_set(sys, GRID, [0.0, 0.0], 1.0, method="support")
    np.testing.assert_allclose(R.extent(), [[-1.0 - h / 2, 1.0 + h / 2]] * 2, atol=h)
    # cell route with steps that match the cell width
    R = reachable_set(sys, GRID, [0.0, 0.0], 10 * h, tau=h)
    np.testing.assert_allclose(R.extent(), [[-10.5 * h, 10.5 * h]] * 2)


def test_controllable_is_reversed_reachable():
    rng = np.random.default_rng(0)
    sys = make_system(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)))
    a = controllable_set(sys, GRID, [0.1, -0.2], 3.0)
    b = reachable_set(sys.reversed(), GRID, [0.1, -0.2], 3.0)
    np.testing.assert_array_equal(a.cells, b.cells)
    assert a.kind == "controllable"


def test_stable_uncontrolled_system_is_controllable_everywhere():
    sys = make_system([[-1.0, 0], [0, -2]], [0.0, 0.0])
    C = controllable_set(sys, GRID, [0.0, 0.0], 20.0)
    assert len(C.cells) == GRID.size


def test_no_control_collapses_D0():
    sys = make_system([[-1.0, 0], [0, -2]], [0.0, 0.0])
    D = control_set_D0(sys, spectral_decompose(sys.A), GRID, 20.0)
    np.testing.assert_array_equal(D.cells, [GRID.index_of([0.0, 0.0])])


def test_D0_routes_agree_on_example1():
    sp = spectral_decompose(EX1.A)
    cells = control_set_D0(EX1, sp, GRID, 20.0)
    support = control_set_D0(EX1, sp, GRID, 20.0, method="support")
    h = GRID.width[0]
    expected = [[-1.0 - h / 2, 1.0 + h / 2]] * 2
    np.testing.assert_allclose(cells.extent(), expected, atol=h)
    np.testing.assert_allclose(support.extent(), expected, atol=h)
    assert _cells_equal_within(cells.cells, support.cells, GRID)


def test_hurwitz_controllable_D0_contains_a_ball():
    sys = make_system([[-1.0, 2.0], [-2.0, -1.0]], [0.0, 1.0])
    D = control_set_D0(sys, spectral_decompose(sys.A), GRID, 20.0)
    near = np.flatnonzero(np.linalg.norm(GRID.centers(), axis=1) < 0.2)
    assert set(near.tolist()) <= D.cell_set()


def test_support_function_of_scalar_system():
    # x' = -x + u, |u| <= 1: reachable interval from 0 is [-(1 - e^-T), 1 - e^-T]
    sys = make_system([[-1.0]], [1.0])
    h = support_function(sys, np.array([[1.0], [-1.0]]), 3.0)
    exact = 1 - math.exp(-3.0)
    assert np.all(h >= exact) and np.all(h <= exact + 1e-4)


def test_hyperbolic_chain_set_is_the_closure_of_D0():
    sys, sp = example_system("example1")
    grid = Grid.cube(2, 2.0, 61)
    chains = chain_control_sets(sys, grid)
    assert len(chains) == 1
    D = control_set_D0(sys, sp, grid, 20.0)
    assert _cells_equal_within(chains[0].cells, D.cells, grid, k=2)


def test_example2_has_one_chain_set_in_space():
    # compared with the support route; the cell route wraps by a few cells in 3D
    sys, sp = example_system("example2")
    grid = Grid.cube(3, 2.0, 31)
    chains = chain_control_sets(sys, grid)
    assert len(chains) == 1
    D = control_set_D0(sys, sp, grid, 20.0, method="support")
    assert _cells_equal_within(chains[0].cells, D.cells, grid, k=1)


def test_mode_parameters_are_checked():
    with pytest.raises(ParameterError):
        reachable_set(EX1, GRID, [0.0, 0.0], 1.0, tau=0.0)
    with pytest.raises(ParameterError):
        reachable_set(EX1, GRID, [0.0, 0.0], 1.0, mode="center", eps=1e-6)
    with pytest.raises(ParameterError):
        reachable_set(EX1, GRID, [0.0, 0.0], 1.0, method="magic")
    with pytest.raises(InputError):
        reachable_set(EX1, GRID, [0.0, 0.0], 1.0, controls=[[3.0]])


def test_example1_sphere_chain_sets():
    sys, sp = example_system("example1")
    mesh = SphereMesh.icosahedral(4)
    sets = chain_control_sets(sys, mesh)
    equator = [s for s in sets if s.region == "equator"]
    central = [s for s in sets if s.region == "central"]
    assert central
    # antipodal pairs at (+-1, 0, 0) and (0, +-1, 0)
    found = []
    for s in equator:
        c = s.centers()
        found.append(tuple(np.round(c[np.argmin(np.abs(c[:, 2]))][:2] / np.linalg.norm(c[0, :2]), 0)))
        assert s.antipode is not None
    expected = {(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)}
    points = [tuple(p) for s in equator for p in np.round(s.centers()[:, :2], 1)]
    for target in expected:
        assert any(np.allclose(p, target, atol=0.1) for p in points)


def test_rotation_circle_is_one_chain_set():
    sys, sp = example_system("example4")
    sets = equator_chain_sets(sys, sp)
    circles = [s for s in sets if s.points.shape[0] > 100]
    assert len(circles) == 1
    pts = circles[0].points
    # fattening against the contraction e^-1 per step leaves a band of a few cells
    assert np.abs(pts[:, 2]).max() <= 3 * circles[0].cell_diameter
    angles = np.sort(np.arctan2(pts[:, 1], pts[:, 0]))
    assert np.diff(angles).max() < 0.05


def test_limit_sets():
    sys, sp = example_system("example1")
    sets = sphere_chain_sets(sys, sp, level=4)
    res = limit_set(sys, chart_to_sphere([0.5, 0.3], sys.gram).s, ZERO, sets)
    assert res.settled and res.within
    nearest = next(s for s in sets if s.name == res.nearest)
    assert np.min(np.linalg.norm(nearest.points - [1.0, 0, 0], axis=1)) < 0.1

    sys, sp = example_system("example4")
    circles = [c for c in equilibria_at_infinity(sys) if hasattr(c, "frequency")]
    s0 = chart_to_sphere([30.0, 0.0, 0.0], sys.gram).s
    res = limit_set(sys, s0, ZERO, equator_chain_sets(sys, sp), circles=circles)
    assert res.matched_circle == 0 and res.settled


def test_stable_origin_limits_to_the_central_set():
    sys = make_system([[-1.0, 0], [0, -2]], [1.0, 1.0])
    sets = sphere_chain_sets(sys, spectral_decompose(sys.A), level=4)
    res = limit_set(sys, chart_to_sphere([0.4, -0.3]).s, ZERO, sets)
    assert res.settled and res.within
    assert next(s for s in sets if s.name == res.nearest).region == "central"


def test_limit_set_parameters():
    with pytest.raises(ParameterError):
        limit_set(EX1, [0, 0, 1.0], ZERO, [], T_tail=10.0, T_total=5.0)


def test_sets_to_csv():
    sys, _ = example_system("example1")
    chains = chain_control_sets(sys, Grid.cube(2, 2.0, 21))
    text = sets_to_csv(chains)
    lines = text.splitlines()
    assert lines[0] == "set,index,c1,c2,kind,region,flags"
    assert len(lines) == 1 + sum(len(s.cells) for s in chains)
    assert sets_to_csv([]) == "set,index,kind,flags\n"
