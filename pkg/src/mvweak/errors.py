"""Exception hierarchy shared by the package and mapped to CLI exit codes."""


class MvweakError(Exception):
    """Base class for package errors."""


class ConfigError(MvweakError, ValueError):
    """Invalid or inconsistent configuration."""


class ShapeError(MvweakError, ValueError):
    """Tensor shapes do not match what an operation expects."""


class ValidationError(MvweakError, ValueError):
    """Input data violates a domain invariant (e.g. non-binary labels)."""


class DataError(MvweakError):
    """Missing, unreadable or malformed data on disk."""


class FormatError(DataError):
    """Malformed MVT1 tensor file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(MvweakError):
    """Non-finite loss, failed oracle or failed gradient check."""
