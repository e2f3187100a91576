"""Meta-learned spatio-temporal graph transfer for fMRI connectomes."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateInputError,
    DimensionError,
    FormatError,
    MetskError,
    NumericalError,
    SingularDegreeError,
    ValidationError,
)

__all__ = [
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "MetskError",
    "NumericalError",
    "SingularDegreeError",
    "ValidationError",
    "__version__",
]
