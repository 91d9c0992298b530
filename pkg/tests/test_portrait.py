import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pflow.acceptance import example_system
from pflow.errors import InputError
from pflow.portrait import Projection, emit_portrait, to_viewport
from pflow.sphere import chart_to_sphere, sphere_trajectory
from pflow.system import ControlSignal

NS = "{http://www.w3.org/2000/svg}"


def test_empty_portrait_is_valid_svg():
    root = ET.fromstring(emit_portrait())
    assert root.tag == NS + "svg"
    assert root.get("width") == "1000"
    assert root.find(f"{NS}g[@id='axes']") is not None
    circle = root.find(f"{NS}circle[@id='equator']")
    assert circle.get("r") == "450"
    assert root.find(f"{NS}polyline") is None


def test_equilibrium_marker_position():
    # (0.5, -0.2) -> (500 + 225, 500 + 90)
    root = ET.fromstring(emit_portrait(equilibria=[[0.5, -0.2, 0.0]]))
    marks = root.findall(f"{NS}g[@id='equilibria']/{NS}circle")
    assert len(marks) == 1
    assert float(marks[0].get("cx")) == pytest.approx(725.0)
    assert float(marks[0].get("cy")) == pytest.approx(590.0)


def test_viewport_map():
    np.testing.assert_allclose(to_viewport([[0, 0], [1, 1], [-2, 0]], radius=2.0), [[500, 500], [725, 275], [50, 500]])


def test_projection_choice():
    p = Projection((2, 0), radius=0.5)
    np.testing.assert_allclose(p([[0.1, 0.2, 0.25]]), [[725.0, 410.0]])
    with pytest.raises(InputError):
        Projection((1, 1))
    with pytest.raises(InputError):
        Projection((0, 5))([[1.0, 2.0]])


def test_high_dimensional_data_needs_a_projection():
    pts = np.zeros((3, 5))
    with pytest.raises(InputError):
        emit_portrait(trajectories=[pts])
    ET.fromstring(emit_portrait(trajectories=[pts], projection=Projection((0, 1))))


def test_example1_portrait_is_deterministic():
    sys, _ = example_system("example1")
    u = ControlSignal.constant(0.0)
    times = np.linspace(0, 10, 101)
    trajs = [sphere_trajectory(sys, chart_to_sphere(x, sys.gram).s, u, times) for x in ([0.2, 0.5], [-0.3, -1.0])]
    a = emit_portrait(trajectories=trajs, equilibria=[[1, 0, 0], [-1, 0, 0]], title="x' = Ax <b>")
    b = emit_portrait(trajectories=trajs, equilibria=[[1, 0, 0], [-1, 0, 0]], title="x' = Ax <b>")
    assert a == b
    root = ET.fromstring(a)
    lines = root.findall(f"{NS}polyline")
    assert [l.get("id") for l in lines] == ["traj0", "traj1"]
    # trajectories head to the equilibria at (+-1, 0, 0): px -> 950 or 50
    last = lines[0].get("points").split()[-1].split(",")
    assert float(last[0]) == pytest.approx(950.0, abs=5.0)
    assert "&lt;b&gt;" in a
    assert not re.search(r"-0[ ,\"]", a)


def test_sets_are_drawn():
    root = ET.fromstring(emit_portrait(sets=[np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 0.99]])], cell_radius=0.02))
    dots = root.findall(f"{NS}g[@id='set0']/{NS}circle")
    assert len(dots) == 2 and float(dots[0].get("r")) == pytest.approx(9.0)
