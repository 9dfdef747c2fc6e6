"""Exception hierarchy shared by the solvers."""


class IssNewtonError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(IssNewtonError, ValueError):
    pass


class SolverError(IssNewtonError):
    """A numerical routine failed to produce a solution."""

    status = "failed"


class MaxIterExceeded(SolverError):
    status = "maxiter"


class SingularPattern(SolverError):
    """The active-set linear system is singular (strong regularity fails here)."""

    status = "singular"


class NonuniqueSolution(SolverError):
    """The enumeration oracle found more than one subproblem solution."""

    status = "nonunique"

    def __init__(self, message, solutions=()):
        super().__init__(message)
        self.solutions = list(solutions)


class DimensionTooLarge(IssNewtonError, ValueError):
    pass


class InsufficientData(IssNewtonError, ValueError):
    pass


class ConfigError(IssNewtonError, ValueError):
    pass
