"""Exception types raised across the toolkit."""


class RetimeError(Exception):
    """Base class for all toolkit errors."""


class NonFinite(RetimeError):
    """A state (or loss) became inf/nan; ``step`` is the failing step index."""

    def __init__(self, step: int, message: str = "", partial=None):
        self.step = step
        self.partial = partial
        super().__init__(message or f"non-finite value at step {step}")


class StepSizeUnderflow(RetimeError):
    pass


class MaxStepsExceeded(RetimeError):
    pass


class DegenerateTrajectory(RetimeError):
    pass


class NonMonotoneAbscissa(RetimeError):
    pass


class NonMonotoneTimeMap(RetimeError):
    pass


class OptimizerDiverged(RetimeError):
    pass


class GridMismatch(RetimeError):
    pass
