"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class VolterraError(Exception):
    """Base class for every error raised by this package."""


class DomainError(VolterraError, ValueError):
    """Argument outside the supported domain (e.g. x > 0 for E_{a,b})."""


class RegimeError(VolterraError):
    """An evaluation regime was asked for an argument it cannot handle."""


class NonConvergenceError(VolterraError, ArithmeticError):
    """No evaluation regime reached the requested accuracy."""


class PrecisionExhaustedError(VolterraError, ArithmeticError):
    """An extended-precision oracle could not certify its error bound."""


class QuadratureError(VolterraError, ArithmeticError):
    """A quadrature did not meet its tolerance."""


class FactorizationError(VolterraError, ArithmeticError):
    """Cholesky factorization failed even after eigenvalue clamping."""


class GridError(VolterraError, ValueError):
    """Inconsistent or too coarse time grids."""


class NonFiniteError(VolterraError, ArithmeticError):
    """A computation produced NaN or Inf."""

    def __init__(self, message: str, step: int | None = None, mode: int | None = None):
        super().__init__(message)
        self.step = step
        self.mode = mode


class DegenerateDataError(VolterraError, ValueError):
    """Data unsuitable for a log-log fit (zeros, NaN, too few points)."""


class ConfigError(VolterraError, ValueError):
    """Invalid experiment configuration."""
