"""Risk-sensitive ergodic control and downside-risk large deviations for factor models."""

__version__ = "0.1.0"

from .exceptions import (CertificationError, ConfigurationError, ConvergenceError,  # noqa: E402
                         DomainTooSmallError, EstimationError, LdriskError,
                         NumericalDegeneracyError)
from .model import ModelSpec, check_assumptions, load_model  # noqa: E402
from .reference import lgq_model, merton_model  # noqa: E402

__all__ = [
    "CertificationError", "ConfigurationError", "ConvergenceError", "DomainTooSmallError",
    "EstimationError", "LdriskError", "NumericalDegeneracyError", "ModelSpec",
    "check_assumptions", "load_model", "lgq_model", "merton_model", "__version__",
]
