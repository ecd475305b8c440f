"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


class NumericalContractError(ArithmeticError):
    """An operator violates a numerical contract (unitarity, positivity)."""


class CapacityError(MemoryError):
    """Requested dense dimension exceeds the configured cap."""


class OptimizerError(RuntimeError):
    """Objective returned a non-finite value during optimization."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class DegenerateReferenceError(ZeroDivisionError):
    """Calibration reference signal vanished."""
