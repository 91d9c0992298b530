import numpy as np
import pytest

from pflow.errors import InputError
from pflow.spectral import spectral_decompose
from pflow.verify import SUITES, random_system, run_suites


def test_random_systems_are_separated():
    rng = np.random.default_rng(0)
    for _ in range(50):
        sys = random_system(rng)
        sp = spectral_decompose(sys.A, group_tol=1e-6)
        assert sum(sp.dims()) == sys.n
        assert min(np.diff(sorted(sp.exponents)), default=1.0) >= 0.5 - 1e-6
        assert np.all(sys.control_range.lower == -1) and np.all(sys.control_range.upper == 1)


def test_hyperbolic_flag():
    rng = np.random.default_rng(1)
    for _ in range(30):
        sp = spectral_decompose(random_system(rng, n=3, hyperbolic=True).A, group_tol=1e-6)
        assert sp.center_index is None


@pytest.mark.parametrize("name", list(SUITES))
def test_each_suite_small(name):
    (res,) = run_suites([name], cases=10)
    assert res.passed, res.examples


def test_streams_do_not_depend_on_the_selection():
    a = run_suites(["lift-r0"], cases=5)[0]
    b = run_suites(["cocycle", "lift-r0"], cases=5)[1]
    assert a.worst == b.worst


def test_unknown_suite():
    with pytest.raises(InputError):
        run_suites(["nonsense"], cases=1)
