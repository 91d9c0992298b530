import json

import numpy as np
import pytest

from pflow.scenarios import ANALYSES, PRESETS, ScenarioError, load_scenario, parse_scenario, preset, serialize
from pflow.system import Polytope


def test_example1_preset():
    sc = preset("example1")
    np.testing.assert_array_equal(sc.A, [[1, 0], [0, -1]])
    np.testing.assert_array_equal(sc.B, [[1], [1]])
    np.testing.assert_array_equal(sc.control_range.lower, [-1])
    np.testing.assert_array_equal(sc.control_range.upper, [1])


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    sc = preset(name)
    doc = serialize(sc)
    again = parse_scenario(json.dumps(doc))
    assert serialize(again) == doc
    # every parameter is echoed
    for entry in doc["analyses"]:
        assert entry["name"] in ANALYSES


def test_empty_analyses_is_valid():
    sc = parse_scenario({"system": {"A": [[0.0]], "B": [[1.0]]}})
    assert sc.analyses == []
    assert sc.name == "scenario"


def test_defaults_are_filled():
    sc = parse_scenario({"system": {"A": [[1.0, 0], [0, -1]], "B": [[1], [1]]}, "analyses": ["exponents"]})
    entry = sc.analysis("exponents")
    assert entry["T"] == 50.0
    assert sc.analysis("chain") is None


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"system": {"A": [[1.0, 0], [0, 1]], "B": [[1.0]]}}, "system.B"),
        ({"system": {"A": [[1.0, 0]], "B": [[1.0]]}}, "system.A"),
        ({"system": {"A": [[1.0]], "B": [[1.0]]}, "analyses": ["nonsense"]}, "analyses[0]"),
        ({"system": {"A": [[1.0]], "B": [[1.0]]}, "seed": -1}, "seed"),
        ({"system": {"A": [[1.0]], "B": [[1.0]]}, "colour": "red"}, "$"),
        ({"system": {"A": [[1.0]], "B": [[1.0]]}, "control": {"type": "constant", "value": [3.0]}}, "control"),
        ({"system": {"A": [[1.0]], "B": [[1.0]]}, "analyses": ["decompose", "decompose"]}, "analyses"),
    ],
)
def test_errors_name_the_offending_entry(doc, path):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(doc)
    assert info.value.path.startswith(path)


def test_lambda0_must_be_an_exponent():
    doc = {"system": {"A": [[2.0, 0], [0, -1]], "B": [[1], [1]]}, "analyses": [{"name": "exponents", "lambda0": 0.5}]}
    with pytest.raises(ScenarioError):
        parse_scenario(doc)


def test_invalid_json_text():
    with pytest.raises(ScenarioError):
        parse_scenario("{not json")


def test_unknown_preset():
    with pytest.raises(ScenarioError):
        preset("example99")


def test_polytope_control_range():
    doc = {
        "system": {"A": [[0.0, 1], [-1, 0]], "B": [[1, 0], [0, 1]],
                   "U": {"type": "polytope", "points": [[-1, -1], [1, -1], [0, 1]]}},
    }
    sc = parse_scenario(doc)
    assert isinstance(sc.control_range, Polytope)
    assert parse_scenario(serialize(sc)).control_range.dim == 2


def test_load_scenario(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(serialize(preset("example3"))))
    assert serialize(load_scenario(path)) == serialize(preset("example3"))
    with pytest.raises(OSError):
        load_scenario(tmp_path / "missing.json")


def test_preset_with_analysis_subset():
    sc = preset("example2", ["decompose", "exponents"])
    assert [a["name"] for a in sc.analyses] == ["decompose", "exponents"]
