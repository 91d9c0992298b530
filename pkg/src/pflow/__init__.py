"""Linear control systems compactified on the Poincare sphere."""

from .errors import (
    DegenerateInputError,
    InputError,
    NearEquatorError,
    ParameterError,
    PflowError,
    RangeError,
)
from .spectral import SpectralData, spectral_decompose
from .system import Box, ControlSignal, LinearSystem, Polytope, bounded_solution, flow, lifted_flow
from .sphere import chart_to_sphere, equilibria_at_infinity, sphere_flow, sphere_to_chart, sphere_trajectory
from .tangent import exponent_estimate, selgrade_frames, stable_convergence_check
from .reach import Grid, SphereMesh, chain_control_sets, control_set_D0, controllable_set, reachable_set

__version__ = "0.1.0"
