"""Exception types shared across the package."""


class ModelError(ValueError):
    """Raised when an MDP/POMDP definition violates its invariants."""


class NumericalError(RuntimeError):
    """Raised when an iterative routine fails to converge or a linear
    system has no usable solution (e.g. reducible chain)."""


class StateError(RuntimeError):
    """Raised when a sequential object is driven from an invalid state
    (stepping a stopped detector, resetting before a stop, ...)."""
