"""Exception types shared across the package."""


class InvalidStateError(ValueError):
    """Raised when a matrix fails the checks required of a physical state."""


class InsufficientDataError(ValueError):
    """Raised when an estimator is asked for a value it cannot form yet."""


class CapacityError(ValueError):
    """Raised when a dense operation exceeds the configured qubit limit."""


class UnsupportedOrderError(ValueError):
    """Raised when a moment order is outside the supported range."""
