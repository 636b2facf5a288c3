"""Regularization by fractional noise: sampling, calculus and diagnostics."""

from .errors import BudgetExceededError, DomainError, GridError, NumericFailure, QuadratureError, SingularCovarianceError
from .fbm_core import TimeGrid
from .regnoise import RegularizingSpec, default_lambda

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError",
    "DomainError",
    "GridError",
    "NumericFailure",
    "QuadratureError",
    "RegularizingSpec",
    "SingularCovarianceError",
    "TimeGrid",
    "default_lambda",
]
