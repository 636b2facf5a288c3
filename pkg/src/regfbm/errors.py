"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter lies outside the range where an operation is defined."""


class GridError(ValueError):
    """A time grid violates its invariants or the dense-method size cap."""


class SingularCovarianceError(ValueError):
    """A covariance block could not be factorized even after jitter."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class QuadratureError(RuntimeError):
    """Nested quadrature did not reach its tolerance."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class BudgetExceededError(ValueError):
    """A combinatorial or dense-linear-algebra budget was exceeded."""


class NumericFailure(FloatingPointError):
    """A simulation produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
