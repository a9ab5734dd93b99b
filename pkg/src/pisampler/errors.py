"""Exception hierarchy shared by every module in the package."""


class PISError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PISError, ValueError):
    """Invalid configuration, shapes or parameter values."""


class UsageError(PISError, RuntimeError):
    """An object was used outside its contract (e.g. a consumed tape)."""


class SimulationError(PISError, FloatingPointError):
    """A simulated state became non-finite.

    ``step`` is the Euler step index at which it happened and ``index`` the
    trajectory index when the failure happened inside a batch.
    """

    def __init__(self, message, step=None, index=None):
        super().__init__(message)
        self.step = step
        self.index = index


class TrainingError(PISError, FloatingPointError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}


class EstimationError(PISError, ArithmeticError):
    """A Monte-Carlo estimator could not produce a value."""


class IncompatibleDataError(PISError, ValueError):
    """Files or objects that do not fit together (e.g. checkpoint vs target)."""
