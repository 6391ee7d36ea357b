"""Missing-slice imputation for small volumetric images."""

from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    FormatError,
    NumericError,
    ShapeError,
    SliceFillError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DegenerateInputError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "SliceFillError",
    "__version__",
]
