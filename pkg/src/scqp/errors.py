"""Exception hierarchy shared by every module of the package."""


class ScqpError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ScqpError, ValueError):
    pass


class NotPositiveDefinite(ScqpError, ValueError):
    pass


class NotStrictlyConvex(NotPositiveDefinite):
    """A surrogate QP would have a singular Hessian."""


class DegenerateEqualities(ScqpError, ValueError):
    pass


class Infeasible(ScqpError):
    """No point satisfies the QP constraints."""


class InfeasibleWorkingSet(Infeasible):
    """The pinned variables of a working set admit no feasible completion."""


class EmptyFreeSet(InfeasibleWorkingSet):
    pass


class DomainViolation(ScqpError, ValueError):
    """Moments fall outside the domain of an objective model."""


class AssumptionViolated(ScqpError):
    """The objective is not decreasing in a used mean or increasing in a used variance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InfeasibleSpec(ScqpError):
    """The mean-variance constraints cannot be satisfied on the simplex."""


class MaxIterations(ScqpError):
    pass


class NoFeasiblePoint(ScqpError):
    pass


class TooLarge(ScqpError, ValueError):
    pass


class ParseError(ScqpError, ValueError):
    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"row {row}, column {column}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class NonPositivePrice(ScqpError, ValueError):
    pass


class NonMonotoneDates(ScqpError, ValueError):
    pass


class TooFewRows(ScqpError, ValueError):
    pass


class WindowTooShort(ScqpError, ValueError):
    pass


class DegenerateInput(ScqpError, ValueError):
    pass


class ConfigError(ScqpError, ValueError):
    pass
