"""Exception taxonomy shared across the package."""


class SliceFillError(Exception):
    """Base class for all package errors."""


class ShapeError(SliceFillError):
    """Tensor shapes violate an operation's dimension contract."""


class ConfigError(SliceFillError):
    """A configuration value is invalid or inconsistent."""


class ContractError(SliceFillError):
    """An operation precondition was violated by the caller."""


class DegenerateInputError(SliceFillError):
    """Input is degenerate (constant volume, zero vector, empty graph)."""


class FormatError(SliceFillError):
    """A serialized file violates its format; carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(SliceFillError):
    """A non-finite value appeared where the numeric contract forbids it."""
