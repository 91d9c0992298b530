import csv
import io
import json
import math

import pytest

from pflow.cli import main
from pflow.runner import run
from pflow.scenarios import parse_scenario, preset, serialize


def _read(path):
    return path.read_bytes()


def test_example2_exponent_table(tmp_path):
    report = run(preset("example2", ["decompose", "selgrade", "exponents"]), str(tmp_path))
    assert report.passed and report.exit_status == 0
    table = report["analyses"]["exponents"]["results"]["table"]
    assert {k: v["theoretical"] for k, v in table.items()} == {"V1": 1.0, "V3": -2.0, "Vc": -1.0}
    rows = list(csv.DictReader(io.StringIO((tmp_path / "exponents.csv").read_text())))
    assert {r["subbundle_label"] for r in rows} == {"V1", "V3", "Vc"}
    assert max(float(r["abs_error"]) for r in rows) < 0.05
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["exit_status"] == 0 and saved["scenario"] == serialize(preset("example2", ["decompose", "selgrade", "exponents"]))


def test_example4_period(tmp_path):
    report = run(preset("example4", ["sphere-sim"]), str(tmp_path))
    assert report.passed
    assert (tmp_path / "portrait_example4-sphere-sim.svg").exists()
    periods = report["analyses"]["sphere-sim"]["results"]["periods"]
    assert periods and all(abs(p["period"] - 2 * math.pi) < 1e-3 for p in periods)


def test_example1_reach_and_chain(tmp_path):
    report = run(preset("example1", ["reach", "chain"]), str(tmp_path))
    assert report.passed, report["failed"]
    header = (tmp_path / "reach.csv").read_text().splitlines()[0]
    assert header.startswith("set,index,c1,c2")


def test_outputs_are_byte_identical(tmp_path):
    sc = preset("example1", ["decompose", "simulate", "sphere-sim", "portrait"])
    run(sc, str(tmp_path / "a"))
    run(sc, str(tmp_path / "b"))
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.suffix in (".csv", ".svg"))
    assert names
    for name in names:
        assert _read(tmp_path / "a" / name) == _read(tmp_path / "b" / name), name


def test_failing_analysis_is_recorded_and_others_run():
    sc = parse_scenario({"system": {"A": [[-1.0]], "B": [[1.0]]},
                         "analyses": [{"name": "verify-stable", "lambda0": -1.0}, "decompose"]})
    report = run(sc, write=False)
    assert report.exit_status == 1
    assert report["analyses"]["verify-stable"]["error"].startswith("ParameterError")
    assert report["analyses"]["decompose"]["error"] is None


def test_empty_analyses_echo_only(tmp_path):
    sc = parse_scenario({"name": "bare", "system": {"A": [[0.0]], "B": [[1.0]]}})
    report = run(sc, str(tmp_path))
    assert report.passed and report["analyses"] == {}
    assert report["files"] == ["report.json"]


def test_seed_override(monkeypatch):
    monkeypatch.setenv("PFLOW_SEED", "17")
    assert run(preset("example2", ["decompose"]), write=False)["seed"] == 17


def test_cli_preset_and_errors(tmp_path, capsys):
    assert main(["preset", "example2", "--analyses", "decompose,exponents", "--out", str(tmp_path)]) == 0
    assert "all assertions passed" in capsys.readouterr().out
    assert main(["preset", "nope"]) == 2
    assert "unknown preset" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"system": {"A": [[1, 2]], "B": [[1]]}}')
    assert main(["run", str(bad)]) == 2


def test_cli_run_file(tmp_path):
    doc = serialize(preset("example2", ["decompose"]))
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "decompose.csv").exists()


def test_cli_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    assert all(f"example{k}:" in out for k in range(1, 6))


def test_cli_verify_subset(capsys):
    assert main(["verify", "--criteria", "1,4"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] criterion 1" in out and "[PASS] criterion 4" in out
    assert main(["verify", "--criteria", "x"]) == 2
    assert main(["verify", "--criteria", "42"]) == 2
