"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`LatentGapError`, so
callers can catch one base type. Subclasses also derive from the closest
builtin category (``ValueError``, ``ArithmeticError``, ``RuntimeError``) to
stay friendly to generic handlers.
"""

from __future__ import annotations


class LatentGapError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(LatentGapError, ValueError):
    """A scalar argument lies outside an operation's mathematical domain."""


class DataError(LatentGapError, ValueError):
    """A dataset violates the schema or a structural invariant."""


class ConfigurationError(LatentGapError, ValueError):
    """A model or lookup was configured inconsistently (e.g. missing key)."""


class NumericError(LatentGapError, ArithmeticError):
    """A numerical routine produced or encountered a non-finite value."""


class BracketError(LatentGapError, ValueError):
    """A root- or quantile-finding target lies outside the given bracket."""


class EmulatorRangeError(LatentGapError, ValueError):
    """A rejection mass falls outside the gap distribution's attainable CDF range."""


class EstimatorError(LatentGapError, ValueError):
    """A classical estimator is undefined on the given data."""


class InfiniteWaitError(LatentGapError, ValueError):
    """No acceptable gaps exist, so the expected waiting time diverges."""


class FitError(LatentGapError, RuntimeError):
    """Maximum-likelihood fitting failed to converge on every start.

    Carries ``best_point`` (transformed parameter vector) and ``best_value``
    (negative log-likelihood) for the least-bad point found.
    """

    def __init__(self, message: str, best_point=None, best_value=None):
        super().__init__(message)
        self.best_point = best_point
        self.best_value = best_value


class BootstrapError(LatentGapError, RuntimeError):
    """Too many bootstrap replicates failed to converge."""


class SimulationError(LatentGapError, RuntimeError):
    """A simulated vehicle exceeded the rejected-gap cap."""


class UsageError(LatentGapError, ValueError):
    """An operation was invoked on arguments it is not meant for."""
