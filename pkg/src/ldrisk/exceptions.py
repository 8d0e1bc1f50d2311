"""Exception hierarchy shared by all modules."""


class LdriskError(Exception):
    """Base class for errors raised by ldrisk."""


class ConfigurationError(LdriskError, ValueError):
    """Malformed model config, dimension mismatch or invalid parameter."""


class NumericalDegeneracyError(LdriskError, ArithmeticError):
    """A matrix that must be invertible is singular or badly conditioned."""


class ConvergenceError(LdriskError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class DomainTooSmallError(LdriskError, RuntimeError):
    """The computational box does not contain the bulk of the dynamics."""


class EstimationError(LdriskError, RuntimeError):
    """A Monte Carlo estimate is undefined (zero mass, zero probability)."""


class CertificationError(LdriskError, ValueError):
    """A chi curve failed its convexity/monotonicity certificate."""
