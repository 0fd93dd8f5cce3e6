"""Exception hierarchy shared across the package."""


class AdfieldError(Exception):
    pass


class InvalidArgumentError(AdfieldError, ValueError):
    pass


class ConfigError(InvalidArgumentError):
    pass


class UnsupportedOperatorError(AdfieldError):
    pass


class SolverFailure(AdfieldError):
    """A numerical solver could not produce a usable state.

    Optimizers treat this as a recoverable, terminating condition rather
    than a crash.
    """


class SingularMatrixError(SolverFailure):
    def __init__(self, row=None, message=None):
        self.row = row
        if message is None:
            message = ("singular matrix" if row is None
                       else f"singular matrix: zero pivot at row {row}")
        super().__init__(message)


class SolverDivergedError(SolverFailure):
    def __init__(self, message, report=None, step=None):
        super().__init__(message)
        self.report = report
        self.step = step


class NonphysicalStateError(SolverFailure):
    def __init__(self, message, quad_point=None):
        super().__init__(message)
        self.quad_point = quad_point
