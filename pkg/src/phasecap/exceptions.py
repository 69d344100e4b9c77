"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class ConvergenceError(RuntimeError):
    """An iterative numerical routine ran out of budget before converging.

    The best estimate and its error bound are kept on the exception so callers
    can decide whether the partial result is usable.
    """

    def __init__(self, message, estimate=None, error_bound=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class SolverError(RuntimeError):
    """A root finder could not bracket or isolate a solution."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
