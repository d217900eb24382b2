"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the admissible set of the operation."""


class UsageError(ValueError):
    """Arguments are individually valid but inconsistent with each other."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (non-convergence, loss of definiteness)."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CflError(NumericalError):
    """The time step violates the stability bound of an explicit-leaning θ-scheme."""
