"""Scenario documents: parsing, validation, defaults and the built-in presets.

A scenario is a JSON-compatible tree::

    {
      "name": "example1",
      "system": {"A": [[1, 0], [0, -1]], "B": [[1], [1]],
                 "U": {"type": "box", "lower": [-1], "upper": [1]}},
      "control": {"type": "constant", "value": [0]},
      "analyses": ["decompose", {"name": "exponents", "T": 50}],
      "output": "out/example1",
      "seed": 0
    }

Analyses may be given by name or as objects with parameters; every missing
parameter is filled from :data:`ANALYSIS_DEFAULTS` and echoed back by
:func:`serialize`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .spectral import spectral_decompose
from .system import Box, ControlSignal, LinearSystem, Polytope

__all__ = [
    "ANALYSES",
    "ANALYSIS_DEFAULTS",
    "PRESETS",
    "Scenario",
    "ScenarioError",
    "parse_scenario",
    "load_scenario",
    "preset",
    "serialize",
]


class ScenarioError(InputError):
    """Invalid scenario document; ``path`` names the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


ANALYSES = (
    "decompose",
    "simulate",
    "sphere-sim",
    "exponents",
    "selgrade",
    "reach",
    "chain",
    "limits",
    "portrait",
    "verify-stable",
)

# Base points and the base exponent are given in R^n coordinates; ``None``
# means "choose from the spectral data".
ANALYSIS_DEFAULTS = {
    "decompose": {"group_tol": 1e-8},
    "simulate": {"x0": None, "T": 10.0, "dt": 0.1},
    "sphere-sim": {"points": None, "T": 20.0, "dt": 0.05, "backend": "exact"},
    "exponents": {"lambda0": None, "base_points": None, "T": 50.0, "method": "loglinear", "tolerance": 0.05},
    "selgrade": {"lambda0": None, "base_points": None},
    "reach": {"cells": None, "half_width": 2.0, "T": 20.0, "tau": 0.1, "method": "cells"},
    "chain": {"cells": None, "half_width": 2.0, "level": 5, "d0_method": "support", "cell_tolerance": 2},
    "limits": {"samples": 50, "T_tail": 10.0, "T_total": 60.0, "level": 5, "max_inconclusive": 0.1},
    "portrait": {"points": 12, "T": 30.0, "dt": 0.05, "coords": [0, 1]},
    "verify-stable": {"lambda0": None, "base_point": None, "delta": 1e-3, "alpha": -0.5, "T": 30.0},
}

# dependency order used by the runner
ORDER = {name: k for k, name in enumerate(ANALYSES)}


@dataclass(eq=False)
class Scenario:
    name: str
    A: np.ndarray
    B: np.ndarray
    control_range: Box | Polytope
    control: ControlSignal
    analyses: list = field(default_factory=list)
    output: str | None = None
    seed: int = 0

    def system(self) -> LinearSystem:
        return LinearSystem(self.A, self.B, self.control_range)

    def analysis(self, name: str) -> dict | None:
        for entry in self.analyses:
            if entry["name"] == name:
                return entry
        return None

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return serialize(self) == serialize(other)


def _matrix(node, path, rows=None, cols=None) -> np.ndarray:
    if not isinstance(node, list) or not node or not all(isinstance(r, list) for r in node):
        raise ScenarioError(path, "expected a non-empty list of rows")
    widths = {len(r) for r in node}
    if len(widths) != 1:
        raise ScenarioError(path, "rows have different lengths")
    try:
        M = np.array(node, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(path, "entries must be numbers") from None
    if not np.all(np.isfinite(M)):
        raise ScenarioError(path, "entries must be finite")
    if rows is not None and M.shape[0] != rows:
        raise ScenarioError(path, f"expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        raise ScenarioError(path, f"expected {cols} columns, got {M.shape[1]}")
    return M


def _vector(node, path, length=None) -> np.ndarray:
    if not isinstance(node, list):
        raise ScenarioError(path, "expected a list of numbers")
    try:
        v = np.array(node, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(path, "entries must be numbers") from None
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise ScenarioError(path, "expected a flat list of finite numbers")
    if length is not None and v.size != length:
        raise ScenarioError(path, f"expected length {length}, got {v.size}")
    return v


def _number(node, path, positive=False) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ScenarioError(path, "expected a number")
    if positive and not node > 0:
        raise ScenarioError(path, "must be positive")
    return float(node)


def _control_range(node, m) -> Box | Polytope:
    path = "system.U"
    if not isinstance(node, dict):
        raise ScenarioError(path, "expected an object")
    kind = node.get("type", "box")
    try:
        if kind == "box":
            lo = _vector(node.get("lower"), f"{path}.lower", m)
            hi = _vector(node.get("upper"), f"{path}.upper", m)
            return Box(lo, hi)
        if kind == "polytope":
            pts = _matrix(node.get("points"), f"{path}.points", cols=m)
            return Polytope(pts)
    except ScenarioError:
        raise
    except InputError as exc:
        raise ScenarioError(path, str(exc)) from None
    raise ScenarioError(f"{path}.type", f"unknown control range type {kind!r}")


def _control(node, m) -> ControlSignal:
    path = "control"
    if node is None:
        return ControlSignal.constant(np.zeros(m))
    if not isinstance(node, dict):
        raise ScenarioError(path, "expected an object")
    kind = node.get("type", "constant")
    try:
        if kind == "constant":
            return ControlSignal.constant(_vector(node.get("value", [0.0] * m), f"{path}.value", m))
        bps = _vector(node.get("breakpoints"), f"{path}.breakpoints")
        vals = _matrix(node.get("values"), f"{path}.values", cols=m)
        if kind == "piecewise":
            return ControlSignal.piecewise(bps, vals)
        if kind == "periodic":
            period = _number(node.get("period"), f"{path}.period", True)
            offset = _number(node.get("offset", 0.0), f"{path}.offset")
            return ControlSignal(bps, vals, period=period, offset=offset)
    except ScenarioError:
        raise
    except InputError as exc:
        raise ScenarioError(path, str(exc)) from None
    raise ScenarioError(f"{path}.type", f"unknown control type {kind!r}")


def _analysis(node, k, n) -> dict:
    path = f"analyses[{k}]"
    if isinstance(node, str):
        node = {"name": node}
    if not isinstance(node, dict) or "name" not in node:
        raise ScenarioError(path, "expected an analysis name or an object with 'name'")
    name = node["name"]
    if name not in ANALYSES:
        raise ScenarioError(f"{path}.name", f"unknown analysis {name!r}; choose from {', '.join(ANALYSES)}")
    defaults = ANALYSIS_DEFAULTS[name]
    unknown = set(node) - set(defaults) - {"name"}
    if unknown:
        raise ScenarioError(path, f"unknown parameter(s) {sorted(unknown)}")
    out = {"name": name}
    for key, default in defaults.items():
        value = node.get(key, default)
        p = f"{path}.{key}"
        if key in ("x0", "base_point") and value is not None:
            value = _vector(value, p, n).tolist()
        elif key in ("points", "base_points") and isinstance(value, list):
            value = [_vector(v, f"{p}[{j}]").tolist() for j, v in enumerate(value)]
        elif key == "coords":
            value = [int(c) for c in _vector(value, p, 2)]
        elif isinstance(default, float) and value is not None:
            value = _number(value, p)
        elif key in ("cells", "level", "samples", "cell_tolerance") and value is not None:
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ScenarioError(p, "expected a positive integer")
        elif key == "lambda0" and value is not None:
            value = _number(value, p)
        out[key] = copy.deepcopy(value)
    if name == "sphere-sim" and out["backend"] not in ("exact", "intrinsic"):
        raise ScenarioError(f"{path}.backend", "expected 'exact' or 'intrinsic'")
    if name in ("exponents",) and out["method"] not in ("endpoint", "loglinear"):
        raise ScenarioError(f"{path}.method", "expected 'endpoint' or 'loglinear'")
    if name == "reach" and out["method"] not in ("cells", "support"):
        raise ScenarioError(f"{path}.method", "expected 'cells' or 'support'")
    if name == "chain" and out["d0_method"] not in ("cells", "support"):
        raise ScenarioError(f"{path}.d0_method", "expected 'cells' or 'support'")
    return out


def _check_lambda0(entry, k, exponents):
    lam = entry.get("lambda0")
    if lam is None or "lambda0" not in entry:
        return
    path = f"analyses[{k}].lambda0"
    if abs(lam) < 1e-12:
        raise ScenarioError(path, "the base exponent must be nonzero")
    if min(abs(lam - e) for e in exponents) > 1e-6:
        raise ScenarioError(path, f"{lam} is not a Lyapunov exponent of A {tuple(exponents)}")


def parse_scenario(doc) -> Scenario:
    """Validate a scenario given as JSON text or as an already parsed tree."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ScenarioError("$", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ScenarioError("$", "expected an object at the top level")
    unknown = set(doc) - {"name", "system", "control", "analyses", "output", "seed"}
    if unknown:
        raise ScenarioError("$", f"unknown key(s) {sorted(unknown)}")
    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name", "expected a non-empty string")
    system = doc.get("system")
    if not isinstance(system, dict):
        raise ScenarioError("system", "expected an object with A, B and U")
    A = _matrix(system.get("A"), "system.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ScenarioError("system.A", f"expected a square matrix, got {A.shape[0]}x{A.shape[1]}")
    B = _matrix(system.get("B"), "system.B", rows=n)
    m = B.shape[1]
    U = _control_range(system.get("U", {"type": "box", "lower": [-1.0] * m, "upper": [1.0] * m}), m)
    control = _control(doc.get("control"), m)
    if not control.values_in(U):
        raise ScenarioError("control", "control values leave the control range")
    analyses = doc.get("analyses", [])
    if not isinstance(analyses, list):
        raise ScenarioError("analyses", "expected a list")
    parsed = [_analysis(a, k, n) for k, a in enumerate(analyses)]
    names = [a["name"] for a in parsed]
    if len(set(names)) != len(names):
        raise ScenarioError("analyses", "each analysis may appear only once")
    if any("lambda0" in a for a in parsed):
        try:
            exps = spectral_decompose(A).exponents
        except InputError as exc:
            raise ScenarioError("system.A", str(exc)) from None
        for k, a in enumerate(parsed):
            _check_lambda0(a, k, exps)
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        raise ScenarioError("output", "expected a directory name")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed", "expected a non-negative integer")
    return Scenario(name, A, B, U, control, parsed, output, seed)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _range_doc(U) -> dict:
    if isinstance(U, Box):
        return {"type": "box", "lower": U.lower.tolist(), "upper": U.upper.tolist()}
    return {"type": "polytope", "points": U.points.tolist()}


def _control_doc(u: ControlSignal) -> dict:
    if u.period is not None:
        return {
            "type": "periodic",
            "breakpoints": u.breakpoints.tolist(),
            "values": u.values.tolist(),
            "period": u.period,
            "offset": u.offset,
        }
    if len(u.breakpoints) == 0:
        return {"type": "constant", "value": u.values[0].tolist()}
    return {"type": "piecewise", "breakpoints": u.breakpoints.tolist(), "values": u.values.tolist()}


def serialize(sc: Scenario) -> dict:
    """JSON-compatible tree with every default filled in."""
    return {
        "name": sc.name,
        "system": {"A": sc.A.tolist(), "B": sc.B.tolist(), "U": _range_doc(sc.control_range)},
        "control": _control_doc(sc.control),
        "analyses": copy.deepcopy(sc.analyses),
        "output": sc.output,
        "seed": sc.seed,
    }


def _ones_system(A):
    A = [list(map(float, row)) for row in A]
    n = len(A)
    return {"A": A, "B": [[1.0]] * n, "U": {"type": "box", "lower": [-1.0], "upper": [1.0]}}


PRESETS = {
    "example1": {
        "name": "example1",
        "system": _ones_system([[1, 0], [0, -1]]),
        "control": {"type": "constant", "value": [0.0]},
        "analyses": ["decompose", "sphere-sim", "reach", "chain", "limits", "portrait"],
    },
    "example2": {
        "name": "example2",
        "system": _ones_system([[2, 0, 0], [0, 1, 0], [0, 0, -1]]),
        "control": {"type": "constant", "value": [0.0]},
        "analyses": [
            "decompose",
            {"name": "selgrade", "lambda0": 1.0, "base_points": [[0.0, 1.0, 0.0]]},
            {"name": "exponents", "lambda0": 1.0, "base_points": [[0.0, 1.0, 0.0]]},
            {"name": "verify-stable", "lambda0": 1.0, "base_point": [0.0, 1.0, 0.0]},
        ],
    },
    "example3": {
        "name": "example3",
        "system": _ones_system([[1, 1, 0], [0, 1, 0], [0, 0, -1]]),
        "control": {"type": "constant", "value": [0.0]},
        "analyses": ["decompose", {"name": "selgrade", "lambda0": 1.0}, {"name": "exponents", "lambda0": 1.0}],
    },
    "example4": {
        "name": "example4",
        "system": _ones_system([[1, 1, 0], [-1, 1, 0], [0, 0, -1]]),
        "control": {"type": "constant", "value": [0.0]},
        "analyses": [
            "decompose",
            {"name": "sphere-sim", "points": [[0.0, 1.0, 0.0, 0.0]], "T": 20.0},
            {"name": "exponents", "lambda0": 1.0},
        ],
    },
    "example5": {
        "name": "example5",
        "system": _ones_system([[2, 0, 0, 0], [0, 1, 1, 0], [0, -1, 1, 0], [0, 0, 0, -1]]),
        "control": {"type": "constant", "value": [0.0]},
        "analyses": ["decompose", {"name": "selgrade", "lambda0": 1.0}, {"name": "exponents", "lambda0": 1.0}],
    },
}


def preset(name: str, analyses=None, output: str | None = None) -> Scenario:
    """Built-in scenario; ``analyses`` (names) replaces the preset's list."""
    if name not in PRESETS:
        raise ScenarioError("preset", f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    doc = copy.deepcopy(PRESETS[name])
    if analyses is not None:
        keep = {a if isinstance(a, str) else a["name"]: a for a in doc["analyses"]}
        doc["analyses"] = [keep.get(a, a) for a in analyses]
    if output is not None:
        doc["output"] = output
    return parse_scenario(doc)
