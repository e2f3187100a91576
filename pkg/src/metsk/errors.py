"""Exception hierarchy shared by all modules."""


class MetskError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MetskError, ValueError):
    """Operand shapes are incompatible."""


class NumericalError(MetskError, FloatingPointError):
    """A loss or gradient became non-finite.

    ``path`` names the offending parameter leaf when one is known.
    """

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message if path is None else f"{message} (leaf: {path})")
        self.path = path


class DegenerateInputError(MetskError, ValueError):
    """Input data cannot support the requested computation (zero variance,
    zero vectors, a single class, ...)."""


class ValidationError(MetskError, ValueError):
    """A configuration or argument value is out of its allowed range."""


class FormatError(MetskError, ValueError):
    """A file on disk does not follow the documented format."""


class SingularDegreeError(DegenerateInputError):
    """A row of ``A + I`` has a nonpositive degree, so ``D^{-1/2}`` is undefined."""
