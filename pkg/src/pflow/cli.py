"""Command-line entry point ``pflow``.

    pflow run <scenario.json> [--out DIR]
    pflow preset <name> [--analyses a,b,c] [--out DIR]
    pflow list-presets
    pflow verify [--criteria 1,2,...] [--cases N]

``run`` and ``preset`` exit with status 0 iff every built-in assertion
passed; ``verify`` exits with status 0 iff every acceptance criterion
passed.  Input errors exit with status 2.
"""

from __future__ import annotations

import argparse
import sys

from .errors import InputError
from .scenarios import ANALYSES, PRESETS, load_scenario, preset


def _csv_list(text: str) -> list:
    return [p.strip() for p in text.split(",") if p.strip()]


def _print_report(report) -> None:
    for name, entry in report["analyses"].items():
        status = "ok" if all(a["passed"] for a in entry["assertions"]) else "FAILED"
        print(f"{name:14s} {status:7s} {entry['seconds']:8.2f} s")
        for a in entry["assertions"]:
            if not a["passed"]:
                print(f"    failed: {a['name']}: {a['detail']}")
    print(f"output: {report['output']}")
    print("all assertions passed" if report["exit_status"] == 0 else f"{len(report['failed'])} assertion(s) failed")


def _run(scenario, out) -> int:
    from .runner import run

    report = run(scenario, out_dir=out)
    _print_report(report)
    return report["exit_status"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pflow", description="Linear control systems on the Poincare sphere.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario", help="path to a JSON scenario")
    p.add_argument("--out", help="output directory (overrides the scenario)")

    p = sub.add_parser("preset", help="run a built-in example")
    p.add_argument("name", help="preset name, see list-presets")
    p.add_argument("--analyses", type=_csv_list, help=f"comma separated subset of: {', '.join(ANALYSES)}")
    p.add_argument("--out", help="output directory")

    sub.add_parser("list-presets", help="list the built-in examples")

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--criteria", type=_csv_list, help="comma separated criterion numbers (default: all)")
    p.add_argument("--cases", type=int, default=None, help="cases per property suite (default 500)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(load_scenario(args.scenario), args.out)
        if args.command == "preset":
            return _run(preset(args.name, args.analyses), args.out)
        if args.command == "list-presets":
            for name in sorted(PRESETS):
                doc = PRESETS[name]
                names = [a if isinstance(a, str) else a["name"] for a in doc["analyses"]]
                print(f"{name}: A = {doc['system']['A']}; analyses {', '.join(names)}")
            return 0
        if args.command == "verify":
            from . import acceptance

            try:
                numbers = [int(c) for c in args.criteria] if args.criteria else None
            except ValueError:
                raise InputError(f"criteria must be numbers, got {args.criteria}") from None
            cases = acceptance.DEFAULT_CASES if args.cases is None else args.cases
            results = acceptance.run_acceptance(numbers, lambda line: print(line, flush=True), cases)
            passed = sum(r.passed for r in results)
            print(f"{passed}/{len(results)} criteria passed")
            return 0 if passed == len(results) else 1
    except (InputError, OSError) as exc:
        print(f"pflow: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
