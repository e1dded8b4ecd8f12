class ApsgdError(Exception):
    pass


class PreconditionError(ApsgdError, ValueError):
    """
    A documented precondition of an operation does not hold. The CLI maps it
    to exit code 2.
    """


class InfeasibleParamsError(PreconditionError):
    """
    Raised by feasibility-gated experiments. The failing ConditionReport is
    kept in `report`.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ScheduleError(ApsgdError, ValueError):
    pass


class DivergenceError(ApsgdError):

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class DelayCapError(ApsgdError):

    def __init__(self, message, step, delay):
        super().__init__(message)
        self.step = step
        self.delay = delay


class ConvergenceError(ApsgdError):
    pass
