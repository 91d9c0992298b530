import numpy as np
import pytest

from pflow.system import Box, ControlSignal, LinearSystem


@pytest.fixture
def zero():
    return ControlSignal.constant(0.0)


def make_system(A, B, gram=None):
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    m = B.shape[1]
    return LinearSystem(np.asarray(A, dtype=float), B, Box(-np.ones(m), np.ones(m)), gram=gram)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
