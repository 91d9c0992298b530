"""Run the analyses requested by a scenario and write their artifacts.

Every analysis produces a result dictionary, a list of built-in assertions
and one CSV file ``<out>/<analysis>.csv``.  Portraits go to
``<out>/portrait_<scenario>.svg`` (the ``portrait`` analysis) and
``<out>/portrait_<scenario>-sphere-sim.svg`` (``sphere-sim``).  The report
is written to ``<out>/report.json``.

CSV columns per analysis:

=============  ==========================================================
decompose      space, exponent, dim, vector, v1..vn
simulate       t, x1..xn, chart_gap
sphere-sim     point, t, s1..s(n+1)
exponents      base_point, subbundle_label, theoretical,
               estimated_T50_forward, estimated_T50_backward, abs_error
selgrade       base_point, subbundle_label, theoretical, vector, w1..w(n+1)
reach          set, index, c1..cn, kind, region, flags
chain          set, index, c1..cn, kind, region, flags
limits         sample, nearest, distance, tolerance, settled, within,
               matched_circle
portrait       trajectory, t, s1..s(n+1)
verify-stable  t, weighted_distance, chart_norm
=============  ==========================================================

``estimated_T50_*`` holds the estimate at the analysis horizon ``T``
(50 by default).  Base points are written as ``;``-separated coordinates.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import traceback

import numpy as np

from .errors import InputError
from .portrait import Projection, emit_portrait
from .reach import (
    DEFAULT_GRID_CELLS,
    Grid,
    chain_control_sets,
    control_set_D0,
    limit_set,
    sets_to_csv,
    sphere_chain_sets,
)
from .scenarios import ORDER, Scenario, serialize
from .spectral import spectral_decompose
from .sphere import (
    EquatorEquilibrium,
    InvariantCircle,
    chart_to_sphere,
    equilibria_at_infinity,
    return_time,
    sphere_to_chart,
    sphere_trajectory,
)
from .system import LinearSystem, flow, random_signal
from .tangent import exponent_estimate, selgrade_frames, stable_convergence_check

__all__ = ["RunReport", "run", "run_analysis"]


def _f(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x + 0.0, ".12g")


def _vec(v) -> str:
    return ";".join(_f(x) for x in np.ravel(v))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_f(c) if isinstance(c, (float, np.floating)) else c for c in row])
    return buf.getvalue()


def _assert(name: str, passed: bool, detail: str = "") -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


class _Context:
    """Shared state: the system with the adapted metric and cached results."""

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.spectral = spectral_decompose(scenario.A)
        self.sys = LinearSystem(scenario.A, scenario.B, scenario.control_range, gram=self.spectral.gram)
        self.u = scenario.control
        self.sphere_sets = None

    @property
    def n(self) -> int:
        return self.sys.n

    def base_index(self, lambda0) -> int:
        sp = self.spectral
        if lambda0 is None:
            nonzero = [k for k, l in enumerate(sp.exponents) if k != sp.center_index]
            if not nonzero:
                raise InputError("no nonzero Lyapunov exponent to base the frames on")
            return max(nonzero, key=lambda k: sp.exponents[k])
        return sp.index_of(float(lambda0))

    def base_points(self, i0: int, given, count: int = 8) -> list:
        """Equator points ``(x, 0)`` with ``x`` a unit vector of the i0-th space."""
        G = self.sys.gram
        space = self.spectral.spaces[i0]
        if given is None:
            if space.shape[1] == 1:
                xs = [space[:, 0]]
            else:
                xs = [math.cos(t) * space[:, 0] + math.sin(t) * space[:, 1] for t in 2 * math.pi * np.arange(count) / count]
        else:
            xs = [np.asarray(x, dtype=float) for x in given]
        out = []
        for x in xs:
            if x.shape != (self.n,):
                raise InputError(f"base point must have {self.n} coordinates")
            x = x / math.sqrt(float(x @ G @ x))
            out.append(np.append(x, 0.0))
        return out

    def chain_sets(self, level: int):
        if self.sphere_sets is None:
            self.sphere_sets = sphere_chain_sets(self.sys, self.spectral, level)
        return self.sphere_sets

    def grid(self, cells, half_width) -> Grid:
        cells = DEFAULT_GRID_CELLS.get(self.n, 11) if cells is None else int(cells)
        return Grid.cube(self.n, float(half_width), cells)


# ---------------------------------------------------------------- analyses


def _decompose(ctx: _Context, p: dict):
    sp = spectral_decompose(ctx.scenario.A, p["group_tol"])
    n = ctx.n
    G = sp.gram
    rows = []
    for k, (lam, basis) in enumerate(zip(sp.exponents, sp.spaces)):
        for j, v in enumerate(basis.T):
            rows.append([k + 1, float(lam), basis.shape[1], j + 1] + [float(x) for x in v])
    total = sum(sp.dims())
    P = sum(sp.projection(k) for k in range(len(sp.spaces)))
    cross = 0.0
    for i in range(len(sp.spaces)):
        for j in range(i + 1, len(sp.spaces)):
            cross = max(cross, float(np.abs(sp.spaces[i].T @ G @ sp.spaces[j]).max()))
    proj_err = float(np.abs(P - np.eye(n)).max())
    results = {
        "exponents": list(sp.exponents),
        "dims": sp.dims(),
        "center_index": sp.center_index,
        "gram": G,
        "warnings": list(sp.warnings),
    }
    assertions = [
        _assert("dimensions add up to n", total == n, f"{sp.dims()} -> {total}"),
        _assert("spaces are orthogonal in the adapted metric", cross <= 1e-9, f"max cross term {cross:.3g}"),
        _assert("projections add up to the identity", proj_err <= 1e-9, f"max deviation {proj_err:.3g}"),
    ]
    header = ["space", "exponent", "dim", "vector"] + [f"v{i + 1}" for i in range(n)]
    return results, assertions, _csv(header, rows), {}


def _simulate(ctx: _Context, p: dict):
    n = ctx.n
    x0 = np.eye(n)[0] if p["x0"] is None else np.asarray(p["x0"], dtype=float)
    if x0.shape != (n,):
        raise InputError(f"x0 must have {n} coordinates")
    times = np.arange(0.0, p["T"] + p["dt"] / 2, p["dt"])
    G = ctx.sys.lifted_gram
    sphere = sphere_trajectory(ctx.sys, chart_to_sphere(x0, ctx.sys.lifted_gram).s, ctx.u, times)
    rows, worst = [], 0.0
    for t, s in zip(times, sphere):
        x = flow(ctx.sys, t, x0, ctx.u)
        h = chart_to_sphere(x, ctx.sys.lifted_gram).s
        d = h - s
        gap = math.sqrt(float(d @ G @ d))
        worst = max(worst, gap)
        rows.append([float(t)] + [float(v) for v in x] + [gap])
    results = {"x0": x0, "final": rows[-1][1 : n + 1], "max_chart_gap": worst}
    assertions = [_assert("chart and sphere trajectories agree", worst <= 1e-6, f"max gap {worst:.3g}")]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + ["chart_gap"]
    return results, assertions, _csv(header, rows), {}


def _default_sphere_points(ctx: _Context) -> list:
    pts = [e.point.s for e in equilibria_at_infinity(ctx.sys) if isinstance(e, EquatorEquilibrium)]
    pts += [c.point(0.0) for c in equilibria_at_infinity(ctx.sys) if isinstance(c, InvariantCircle)]
    rng = np.random.default_rng(ctx.seed)
    for _ in range(4):
        s = rng.standard_normal(ctx.n + 1)
        s[-1] = abs(s[-1])
        pts.append(s)
    G = ctx.sys.lifted_gram
    return [np.asarray(s, dtype=float) / math.sqrt(float(s @ G @ s)) for s in pts]


def _sphere_sim(ctx: _Context, p: dict):
    n = ctx.n
    G = ctx.sys.lifted_gram
    points = _default_sphere_points(ctx) if p["points"] is None else [np.asarray(s, dtype=float) for s in p["points"]]
    times = np.arange(0.0, p["T"] + p["dt"] / 2, p["dt"])
    circles = [c for c in equilibria_at_infinity(ctx.sys) if isinstance(c, InvariantCircle)]
    rows, trajs, norm_err, periods = [], [], 0.0, []
    assertions = []
    for k, s0 in enumerate(points):
        if s0.shape != (n + 1,):
            raise InputError(f"sphere points must have {n + 1} coordinates")
        if abs(float(s0 @ G @ s0) - 1.0) > 1e-8:
            raise InputError(f"sphere point {k} is not on the unit sphere")
        traj = sphere_trajectory(ctx.sys, s0, ctx.u, times)
        trajs.append(traj)
        norm_err = max(norm_err, float(np.abs(np.sqrt(np.einsum("ij,jk,ik->i", traj, G, traj)) - 1).max()))
        for t, s in zip(times, traj):
            rows.append([k, float(t)] + [float(v) for v in s])
        if ctx.u.constant and np.allclose(ctx.u.values, 0):
            for c in circles:
                if c.distance(s0, G) <= 1e-9 and c.frequency > 0:
                    expected = 2 * math.pi / c.frequency
                    T_ret = return_time(ctx.sys, s0, ctx.u, 0.5 * expected, 1.5 * expected)
                    periods.append({"point": k, "period": T_ret, "expected": expected})
                    assertions.append(
                        _assert(
                            f"point {k} returns after one period",
                            abs(T_ret - expected) <= 1e-3,
                            f"return time {T_ret:.9f}, expected {expected:.9f}",
                        )
                    )
    assertions.insert(0, _assert("trajectories stay on the sphere", norm_err <= 1e-10, f"max |norm - 1| {norm_err:.3g}"))
    eq = [e.point.s for e in equilibria_at_infinity(ctx.sys) if isinstance(e, EquatorEquilibrium)]
    svg = emit_portrait(
        trajs,
        equilibria=eq,
        projection=Projection((0, 1)) if n + 1 > 3 else None,
        title=f"{ctx.scenario.name}: sphere trajectories",
    )
    results = {"points": points, "final": [t[-1] for t in trajs], "max_norm_error": norm_err, "periods": periods}
    header = ["point", "t"] + [f"s{i + 1}" for i in range(n + 1)]
    return results, assertions, _csv(header, rows), {f"portrait_{ctx.scenario.name}-sphere-sim.svg": svg}


def _exponent_rows(ctx: _Context, p: dict):
    i0 = ctx.base_index(p["lambda0"])
    rows = []
    for s in ctx.base_points(i0, p["base_points"]):
        for frame in selgrade_frames(ctx.sys, ctx.spectral, i0, s, ctx.u):
            for w in frame.basis.T:
                fwd = exponent_estimate(ctx.sys, s, ctx.u, w, p["T"], "forward", p["method"])
                bwd = exponent_estimate(ctx.sys, s, ctx.u, w, p["T"], "backward", p["method"])
                err = max(abs(fwd - frame.theoretical_exponent), abs(bwd - frame.theoretical_exponent))
                rows.append([_vec(s), frame.label, float(frame.theoretical_exponent), fwd, bwd, err])
    return i0, rows


def _exponents(ctx: _Context, p: dict):
    i0, rows = _exponent_rows(ctx, p)
    worst = max(r[-1] for r in rows)
    table = {}
    for r in rows:
        table.setdefault(r[1], {"theoretical": r[2], "forward": [], "backward": []})
        table[r[1]]["forward"].append(r[3])
        table[r[1]]["backward"].append(r[4])
    results = {"lambda0": ctx.spectral.exponents[i0], "T": p["T"], "method": p["method"], "table": table, "max_abs_error": worst}
    assertions = [
        _assert(
            "estimated exponents match theory in both time directions",
            worst <= p["tolerance"],
            f"max abs error {worst:.4f} (tolerance {p['tolerance']})",
        )
    ]
    header = ["base_point", "subbundle_label", "theoretical", "estimated_T50_forward", "estimated_T50_backward", "abs_error"]
    return results, assertions, _csv(header, rows), {}


def _selgrade(ctx: _Context, p: dict):
    n = ctx.n
    G = ctx.sys.lifted_gram
    i0 = ctx.base_index(p["lambda0"])
    rows, summary, assertions = [], [], []
    for s in ctx.base_points(i0, p["base_points"]):
        frames = selgrade_frames(ctx.sys, ctx.spectral, i0, s, ctx.u)
        dims = {f.label: f.dim for f in frames}
        total = sum(dims.values())
        tangent = max(float(np.abs(f.basis.T @ G @ s).max()) for f in frames)
        rank = int(np.linalg.matrix_rank(np.hstack([f.basis for f in frames]), tol=1e-9))
        summary.append({"base_point": s, "dims": dims, "exponents": {f.label: f.theoretical_exponent for f in frames}})
        assertions.append(_assert(f"frames at {_vec(s)} span the tangent space", total == n and rank == n, f"dims {dims}, rank {rank}"))
        assertions.append(_assert(f"frames at {_vec(s)} are tangent", tangent <= 1e-9, f"max <w, s> {tangent:.3g}"))
        for f in frames:
            for j, w in enumerate(f.basis.T):
                rows.append([_vec(s), f.label, float(f.theoretical_exponent), j + 1] + [float(x) for x in w])
    results = {"lambda0": ctx.spectral.exponents[i0], "frames": summary}
    header = ["base_point", "subbundle_label", "theoretical", "vector"] + [f"w{i + 1}" for i in range(n + 1)]
    return results, assertions, _csv(header, rows), {}


def _reach(ctx: _Context, p: dict):
    grid = ctx.grid(p["cells"], p["half_width"])
    D0 = control_set_D0(ctx.sys, ctx.spectral, grid, p["T"], tau=p["tau"], method=p["method"])
    zero = grid.index_of(np.zeros(ctx.n))
    results = {
        "grid": grid.describe(),
        "cells": len(D0),
        "extent": D0.extent(),
        "projected_extents": D0.params.get("projected_extents"),
        "escaping_cells": len(D0.flags),
    }
    assertions = [_assert("control set contains the cell of 0", zero in D0.cell_set(), f"{len(D0)} cells")]
    return results, assertions, sets_to_csv([D0]), {}


def _cheb_hausdorff(grid: Grid, a, b) -> int:
    """Hausdorff distance of two cell sets in cells, Chebyshev metric on indices."""
    from scipy.spatial import cKDTree

    ia = grid.multi_index(np.asarray(a))
    ib = grid.multi_index(np.asarray(b))
    d1 = cKDTree(ib).query(ia, p=np.inf)[0].max()
    d2 = cKDTree(ia).query(ib, p=np.inf)[0].max()
    return int(max(d1, d2))


def _chain(ctx: _Context, p: dict):
    assertions = []
    results = {}
    csv_text = sets_to_csv([])
    if ctx.n <= 2:
        grid = ctx.grid(p["cells"], p["half_width"])
        sets = chain_control_sets(ctx.sys, grid)
        D0 = control_set_D0(ctx.sys, ctx.spectral, grid, 20.0, method=p["d0_method"])
        zero = grid.index_of(np.zeros(ctx.n))
        holder = [s for s in sets if zero in s.cell_set()]
        results["grid"] = grid.describe()
        results["grid_sets"] = [{"cells": len(s), "extent": s.extent(), "escaping_cells": len(s.flags)} for s in sets]
        results["D0_cells"] = len(D0)
        if holder:
            dist = _cheb_hausdorff(grid, holder[0].cells, D0.cells)
            results["hausdorff_to_D0_cells"] = dist
            assertions.append(
                _assert(
                    "chain set around 0 is the closure of the control set",
                    dist <= p["cell_tolerance"],
                    f"Hausdorff distance {dist} cells (tolerance {p['cell_tolerance']})",
                )
            )
        else:
            assertions.append(_assert("chain set around 0 is the closure of the control set", False, "no chain set contains 0"))
        csv_text = sets_to_csv(sets)
    sphere_sets = ctx.chain_sets(p["level"])
    results["sphere_sets"] = [{"name": s.name, "region": s.region, "points": len(s.points)} for s in sphere_sets]
    central = [s for s in sphere_sets if s.region == "central"]
    equator = [s for s in sphere_sets if s.region == "equator"]
    assertions.append(_assert("a central chain set was found", bool(central), f"{len(central)} central sets"))
    assertions.append(_assert("equator chain sets were found", bool(equator), f"{len(equator)} equator sets"))
    return results, assertions, csv_text, {}


def _limits(ctx: _Context, p: dict):
    sets = ctx.chain_sets(p["level"])
    circles = [c for c in equilibria_at_infinity(ctx.sys) if isinstance(c, InvariantCircle)]
    rng = np.random.default_rng(ctx.seed)
    G = ctx.sys.lifted_gram
    rows, out = [], []
    for k in range(int(p["samples"])):
        s0 = rng.standard_normal(ctx.n + 1)
        s0 /= math.sqrt(float(s0 @ G @ s0))
        u = random_signal(ctx.sys.control_range, rng, p["T_total"], 1.0)
        r = limit_set(ctx.sys, s0, u, sets, p["T_tail"], p["T_total"], circles=circles)
        out.append(r)
        mc = "" if r.matched_circle is None else r.matched_circle
        rows.append([k, r.nearest or "", r.distance, r.tolerance, int(r.settled), int(r.within), mc])
    inconclusive = sum(r.inconclusive for r in out) / max(len(out), 1)
    bad = [k for k, r in enumerate(out) if r.settled and not r.within]
    results = {
        "samples": len(out),
        "inconclusive_fraction": inconclusive,
        "settled_outside": bad,
        "nearest": {name: sum(r.nearest == name for r in out) for name in sorted({r.nearest for r in out if r.nearest})},
    }
    assertions = [
        _assert("few inconclusive tails", inconclusive < p["max_inconclusive"], f"fraction {inconclusive:.3f}"),
        _assert("settled tails lie near a chain set", not bad, f"{len(bad)} settled tails outside tolerance"),
    ]
    header = ["sample", "nearest", "distance", "tolerance", "settled", "within", "matched_circle"]
    return results, assertions, _csv(header, rows), {}


def _portrait(ctx: _Context, p: dict):
    n = ctx.n
    coords = tuple(p["coords"])
    times = np.arange(0.0, p["T"] + p["dt"] / 2, p["dt"])
    trajs, rows = [], []
    count = int(p["points"])
    for k in range(count):
        theta = 2 * math.pi * (k + 0.5) / count
        x = np.zeros(n)
        x[coords[0] % n] = 0.8 * math.cos(theta)
        if n > 1:
            x[coords[1] % n] = 0.8 * math.sin(theta)
        s0 = chart_to_sphere(x, ctx.sys.lifted_gram).s
        traj = sphere_trajectory(ctx.sys, s0, ctx.u, times)
        trajs.append(traj)
        for t, s in zip(times, traj):
            rows.append([k, float(t)] + [float(v) for v in s])
    eq = [e.point.s for e in equilibria_at_infinity(ctx.sys) if isinstance(e, EquatorEquilibrium)]
    sets = [s.points for s in ctx.sphere_sets] if ctx.sphere_sets is not None else []
    svg = emit_portrait(trajs, sets, eq, Projection(coords), title=f"{ctx.scenario.name}: phase portrait")
    upper = all(np.all(t[:, -1] >= -1e-12) for t in trajs)
    results = {"trajectories": count, "equilibria": len(eq), "sets": len(sets)}
    assertions = [_assert("upper hemisphere is invariant", upper, "")]
    header = ["trajectory", "t"] + [f"s{i + 1}" for i in range(n + 1)]
    return results, assertions, _csv(header, rows), {f"portrait_{ctx.scenario.name}.svg": svg}


def _verify_stable(ctx: _Context, p: dict):
    i0 = ctx.base_index(p["lambda0"])
    given = None if p["base_point"] is None else [p["base_point"]]
    s0 = ctx.base_points(i0, given)[0]
    rep = stable_convergence_check(ctx.sys, ctx.spectral, i0, s0, ctx.u, p["delta"], p["alpha"], p["T"], seed=ctx.seed)
    norms = rep.chart_norms if rep.chart_norms is not None else [float("nan")] * len(rep.times)
    rows = [[float(t), float(w), float(c)] for t, w, c in zip(rep.times, rep.weighted_distance, norms)]
    results = {
        "base_point": s0,
        "kappa": rep.kappa,
        "alpha": rep.alpha,
        "monotone": rep.monotone,
        "final_weighted_distance": rep.final_value,
        "final_chart_norm": None if rep.chart_norms is None else float(rep.chart_norms[-1]),
        "notes": rep.notes,
    }
    assertions = [
        _assert("weighted distance decreases below threshold", rep.converged, f"final {rep.final_value:.3g}"),
        _assert("chart preimage escapes to infinity", rep.diverged is not False, f"final norm {results['final_chart_norm']}"),
    ]
    return results, assertions, _csv(["t", "weighted_distance", "chart_norm"], rows), {}


_ANALYSES = {
    "decompose": _decompose,
    "simulate": _simulate,
    "sphere-sim": _sphere_sim,
    "exponents": _exponents,
    "selgrade": _selgrade,
    "reach": _reach,
    "chain": _chain,
    "limits": _limits,
    "portrait": _portrait,
    "verify-stable": _verify_stable,
}


# ---------------------------------------------------------------- driver


class RunReport(dict):
    """``report.json`` contents: parameter echo, per-analysis entries, exit status."""

    @property
    def passed(self) -> bool:
        return self["exit_status"] == 0

    @property
    def exit_status(self) -> int:
        return self["exit_status"]

    def assertions(self) -> list:
        return [a for entry in self["analyses"].values() for a in entry["assertions"]]


def run_analysis(ctx: _Context, entry: dict) -> tuple:
    params = {k: v for k, v in entry.items() if k != "name"}
    return _ANALYSES[entry["name"]](ctx, params)


def run(scenario: Scenario, out_dir: str | None = None, write: bool = True) -> RunReport:
    """Execute the scenario's analyses in dependency order.

    An analysis that raises is recorded with its error and counts as a
    failed assertion; the remaining analyses still run.  ``PFLOW_SEED``
    overrides the scenario seed.
    """
    seed = int(os.environ.get("PFLOW_SEED", scenario.seed))
    out_dir = out_dir or scenario.output or os.path.join("pflow-out", scenario.name)
    report = RunReport(scenario=serialize(scenario), seed=seed, output=out_dir, analyses={})
    files = {}
    try:
        ctx = _Context(scenario, seed)
    except Exception as exc:  # noqa: BLE001
        ctx = None
        report["setup_error"] = f"{type(exc).__name__}: {exc}"
    for entry in sorted(scenario.analyses, key=lambda e: ORDER[e["name"]]):
        name = entry["name"]
        t0 = time.perf_counter()
        record = {"parameters": {k: v for k, v in entry.items() if k != "name"}, "results": {}, "assertions": [], "error": None}
        if ctx is None:
            record["error"] = report["setup_error"]
        else:
            try:
                results, assertions, csv_text, extra = run_analysis(ctx, entry)
                record["results"] = results
                record["assertions"] = assertions
                files[f"{name}.csv"] = csv_text
                files.update(extra)
            except Exception as exc:  # noqa: BLE001
                record["error"] = f"{type(exc).__name__}: {exc}"
                record["traceback"] = traceback.format_exc(limit=4)
        if record["error"] is not None:
            record["assertions"].append(_assert("analysis completed", False, record["error"]))
        record["seconds"] = time.perf_counter() - t0
        report["analyses"][name] = _jsonable(record)
    failed = [a["name"] for a in report.assertions() if not a["passed"]]
    if ctx is None:
        failed.append("setup")
    report["failed"] = failed
    report["exit_status"] = 1 if failed else 0
    report["files"] = sorted(files) + ["report.json"]
    if write:
        os.makedirs(out_dir, exist_ok=True)
        for fname, text in sorted(files.items()):
            with open(os.path.join(out_dir, fname), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    report["_files"] = files
    return report
