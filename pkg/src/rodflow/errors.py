"""Exception hierarchy shared by all rodflow modules."""


class RodflowError(Exception):
    """Base class for every error raised by rodflow."""


class InvalidInputError(RodflowError, ValueError):
    """Malformed grid data: non-finite samples, bad sizes, mismatched grids."""


class ParameterError(RodflowError, ValueError):
    """A scalar parameter is outside its admissible range (e.g. gamma == 0)."""


class ResolutionError(RodflowError, ValueError):
    """A requested feature cannot be resolved on the grid.

    ``minimal_N`` carries the smallest even grid size that would resolve it.
    """

    def __init__(self, message, minimal_N=None):
        super().__init__(message)
        self.minimal_N = minimal_N


class DiffeoDomainError(RodflowError, ValueError):
    """The map is not an orientation preserving diffeomorphism."""


class NumericalError(RodflowError, ArithmeticError):
    """An iterative method failed to converge."""


class OutsideDomainError(RodflowError):
    """The spray flow did not survive up to the requested time.

    ``t_fail`` is the last time reached before termination.
    """

    def __init__(self, message, t_fail=None, reason=None):
        super().__init__(message)
        self.t_fail = t_fail
        self.reason = reason


class DegenerateDirectionError(RodflowError):
    """The differential of exp vanishes at the probe point."""


class ConfigError(RodflowError, ValueError):
    """Invalid command line configuration."""
