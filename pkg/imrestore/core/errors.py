class RestorationError(Exception):
    """Base class for errors raised by the restoration toolkit."""

    exit_code = 1


class ConfigError(RestorationError):
    """Raised when a run configuration field is invalid."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ImageFormatError(RestorationError):
    """Raised when an image file cannot be parsed or written."""

    exit_code = 3


class SolverError(RestorationError):
    """Raised when a solver meets non-finite values or a failed factorization."""

    exit_code = 4


class ShapeError(RestorationError, ValueError):
    """Raised when operator inputs do not have matching shapes."""
