"""Exception types shared across the package."""


class PflowError(Exception):
    """Base class for all errors raised by pflow."""


class InputError(PflowError, ValueError):
    """Malformed or inconsistent input (non-finite entries, wrong shapes, ...)."""


class DegenerateInputError(InputError):
    """Input too close to a singular configuration (e.g. a zero vector to project)."""


class NearEquatorError(PflowError, ValueError):
    """A sphere point is too close to the equator to be mapped back to the chart."""


class ParameterError(PflowError, ValueError):
    """Numerical parameter outside its admissible range."""


class RangeError(PflowError, OverflowError):
    """Floating point overflow.

    Attributes
    ----------
    time : float or None
        Time at which the overflow was detected, when meaningful.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
