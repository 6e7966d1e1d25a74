"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridError(ValueError):
    """Grid too small, wrong dimension, or incompatible fields."""


class PreconditionError(ValueError):
    """A documented precondition of an operation does not hold."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class SimulationError(RuntimeError):
    """A time integration produced non-finite values.

    ``snapshot_path`` points to the last state written before the failure,
    or is None when no checkpoint directory was configured.
    """

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
