"""Exception types raised across the toolkit."""


class LVCEError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(LVCEError, ValueError):
    pass


class ShapeError(InvalidArgumentError):
    pass


class EmptyRegionError(InvalidArgumentError):
    pass


class DegenerateRangeError(InvalidArgumentError):
    pass


class DegenerateVarianceError(InvalidArgumentError):
    pass


class NiftiFormatError(LVCEError):
    """Malformed, truncated or unsupported NIfTI-1 file.

    ``field`` names the offending header field when one can be identified.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class RegistrationError(LVCEError):
    pass


class TrainingDivergenceError(LVCEError, FloatingPointError):
    pass


class DependencyError(LVCEError):
    """A pipeline stage is missing an output of an earlier stage."""
