"""Exception types shared across the package."""


class FBridgeError(Exception):
    """Base class for all fbridge errors."""


class InvalidConfig(FBridgeError):
    """A configuration field violates its constraints."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"invalid config field '{field}': {message}")


class SingularMatrix(FBridgeError):
    """Linear solve hit a pivot below the relative threshold."""


class NotPositiveDefinite(FBridgeError):
    """Cholesky failed even after the permitted diagonal jitter."""


class NoConvergence(FBridgeError):
    """Adaptive quadrature exceeded the maximum subdivision depth."""


class ShapeMismatch(FBridgeError):
    """Array argument has an incompatible shape."""


class NonFiniteGradient(FBridgeError):
    """A gradient or parameter update produced NaN or infinity."""


class TimeTooCloseToOne(FBridgeError):
    """Pinned drift requested within the endpoint clamp window."""


class DivergenceDetected(FBridgeError):
    """Online finetuning loss exceeded its divergence threshold."""


class EmptySet(FBridgeError):
    """A metric was asked to compare empty sample sets."""
