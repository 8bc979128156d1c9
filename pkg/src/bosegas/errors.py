"""Exception types shared across the package.

Numerical failures carry enough state to diagnose or resume; configuration
problems are kept separate so the CLI can map them to distinct exit codes.
"""


class BosegasError(Exception):
    """Base class for all package errors."""


class PreconditionError(BosegasError, ValueError):
    """An operation was called outside its documented domain."""


class ConfigError(BosegasError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class NumericalError(BosegasError):
    """Base for numerical failures (CLI exit code 3)."""


class IndeterminateClassificationError(NumericalError):
    """Core classification quadrature neither converged nor blew up."""

    def __init__(self, message, partial_sums=None):
        super().__init__(message)
        self.partial_sums = partial_sums if partial_sums is not None else []


class NoAdmissibleSolutionError(NumericalError):
    """The zero-energy radial solution lost positivity (v too attractive)."""


class IncreaseRmaxError(NumericalError):
    """Scattering-length tail has not settled at the requested radius."""


class RDependenceError(NumericalError):
    """Planar scattering length still depends on the truncation radius."""


class InfiniteBornLengthError(NumericalError):
    """The integral defining the Born length diverges."""


class NonConvergenceError(NumericalError):
    """Iteration budget exhausted; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ZeroAcceptanceError(NumericalError):
    """Every replica was rejected (hard-core contact in all samples)."""


class EnlargeGridError(NumericalError):
    """Too much mass reached the boundary of the computational box."""
