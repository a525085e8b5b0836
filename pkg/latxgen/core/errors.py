"""Exception hierarchy shared by every latxgen module."""
from typing import Iterable


class LatXGenError(Exception):
    """Base error carrying a user-facing message and a machine-readable type."""

    def __init__(self, message: str, error_type: str = "unknown"):
        """
        Initialize error.

        Args:
            message: Error message for the user
            error_type: Type of error - "shape", "geometry", "phantom", "unmeasurable",
                "config", "prerequisite", "checkpoint" or "unknown"
        """
        super().__init__(message)
        self.message = message
        self.error_type = error_type


class ShapeError(LatXGenError):
    """Tensor shape, rank or channel-count violation."""

    def __init__(self, message: str):
        super().__init__(message, error_type="shape")


class SpectralSizeError(ShapeError):
    """FFT requested on spatial dims that are not powers of two."""


class GeometryError(LatXGenError):
    """Invalid camera, frame or point set."""

    def __init__(self, message: str):
        super().__init__(message, error_type="geometry")


class PhantomError(LatXGenError):
    """Phantom spec cannot be realised; lists every violated constraint."""

    def __init__(self, violations: Iterable[str]):
        self.violations = list(violations)
        super().__init__(
            "Infeasible phantom spec: " + "; ".join(self.violations), error_type="phantom"
        )


class MeasurementError(LatXGenError):
    """Angles cannot be measured on the given source."""

    def __init__(self, message: str):
        super().__init__(message, error_type="unmeasurable")


class ConfigError(LatXGenError):
    """Unknown key or invalid value in a configuration."""

    def __init__(self, message: str):
        super().__init__(message, error_type="config")


class PrerequisiteError(LatXGenError):
    """A required artifact (checkpoint, corpus, frozen network) is missing or unusable."""

    def __init__(self, message: str):
        super().__init__(message, error_type="prerequisite")


class CheckpointError(LatXGenError):
    """Malformed checkpoint container."""

    def __init__(self, message: str):
        super().__init__(message, error_type="checkpoint")
