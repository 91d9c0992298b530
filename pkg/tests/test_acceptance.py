"""Acceptance criteria, one test each.

Every test prints a ``[PASS]`` / ``[FAIL]`` line; the lines are repeated in
the terminal summary.  Run directly (``python tests/test_acceptance.py``) to
get just the lines.
"""

import sys

import pytest

from pflow.acceptance import CRITERIA, DEFAULT_CASES

LINES = {}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    result = CRITERIA[number](DEFAULT_CASES) if number == 9 else CRITERIA[number]()
    LINES[number] = result.line()
    print(result.line())
    assert result.passed, result.detail


if __name__ == "__main__":
    from pflow.acceptance import run_acceptance

    results = run_acceptance(echo=print)
    sys.exit(0 if all(r.passed for r in results) else 1)
