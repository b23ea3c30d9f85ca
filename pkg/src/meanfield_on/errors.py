"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class ParameterError(ValueError):
    """Invalid model or experiment parameters."""


class NumericalError(ArithmeticError):
    """An iterative scheme failed to converge or produced non-finite output."""


class ConsistencyError(ArithmeticError):
    """A cross-checked identity or invariant was violated."""


class BesselOverflowError(OverflowError, NumericalError):
    """Argument too large for the Bessel ratio scheme."""


class EstimationError(ValueError):
    """Too little data for a requested estimator."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
