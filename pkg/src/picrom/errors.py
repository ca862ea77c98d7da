"""Exception types shared across the solver stack."""


class PicromError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PicromError, ValueError):
    """Invalid sizes, tolerances, or parameter values at setup time."""


class EvaluationError(PicromError, ValueError):
    """A pointwise kernel received data it cannot evaluate (non-finite input)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(PicromError, RuntimeError):
    """A time integration produced non-finite state."""

    def __init__(self, message, parameter_index=None, time=None):
        super().__init__(message)
        self.parameter_index = parameter_index
        self.time = time


class StepFailureError(PicromError, RuntimeError):
    """An implicit stage failed to converge."""

    def __init__(self, message, iterations=None, residual_trace=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual_trace = list(residual_trace) if residual_trace else []


class DegenerateDataError(PicromError, ValueError):
    """A data-driven fit received degenerate input (e.g. an all-zero window)."""


class FitFailureError(PicromError, RuntimeError):
    """A post-processing fit (rate extraction) could not be performed."""
