"""Exception hierarchy shared by the library and the CLI."""


class BgmmError(Exception):
    """Base class for all library errors."""


class DimensionError(BgmmError, ValueError):
    """Shapes of the operands do not agree."""


class SingularMatrixError(BgmmError, ArithmeticError):
    """A covariance or scale matrix could not be factorized, even with jitter."""


class ConditioningError(SingularMatrixError):
    """The input block of a mixture component is numerically singular."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class MomentUndefinedError(BgmmError, ValueError):
    """A t-distribution with dof <= 2 has no finite covariance."""

    def __init__(self, message, components=()):
        super().__init__(message)
        self.components = tuple(components)


class InvalidPriorError(BgmmError, ValueError):
    """Normal-Wishart hyperparameters do not define a proper distribution."""


class FitError(BgmmError, RuntimeError):
    """Variational fitting could not proceed."""


class SolverError(BgmmError, ArithmeticError):
    """The Riccati recursion produced a non positive-definite control precision."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
