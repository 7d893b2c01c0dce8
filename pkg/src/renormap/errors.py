"""Exception hierarchy shared by all modules."""


class RenormapError(Exception):
    """Base class for library errors."""


class InputError(RenormapError, ValueError):
    """Malformed or out-of-domain input."""


class SizeError(InputError):
    """Problem too large for an exhaustive routine."""


class PlanError(InputError):
    """Inconsistent hierarchical plan."""


class NumericDivergenceError(RenormapError, ArithmeticError):
    """Non-finite values appeared while iterating messages."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite messages at iteration {iteration}")


class GenerationError(RenormapError):
    """Synthetic data generation failed."""


class EstimationError(RenormapError, ValueError):
    """A statistical estimate is undefined for the given sample."""
