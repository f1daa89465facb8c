"""Exception types shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
config/format problems exit 2, I/O exits 3, numeric aborts exit 4.
"""


class DatlabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DatlabError, ValueError):
    """Operands have incompatible dimensions."""


class StateError(DatlabError, RuntimeError):
    """An operation was called out of order, e.g. backward before forward."""


class ValidationError(DatlabError, ValueError):
    """Input data violates a documented precondition."""


class ConfigError(DatlabError, ValueError):
    """A configuration value or key is invalid."""


class FormatError(DatlabError, ValueError):
    """A file does not conform to its declared format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(DatlabError, ArithmeticError):
    """Training produced a non-finite quantity and was aborted."""
