"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An operation received tensors whose shapes do not conform."""


class GraphError(RuntimeError):
    """Misuse of the reverse-mode tape (detached loss, double backward, ...)."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite output is required."""
