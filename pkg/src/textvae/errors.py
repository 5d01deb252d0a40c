"""Exception types shared across the package.

The CLI maps these onto stable exit codes: usage/config problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class DimensionError(ValueError):
    """Tensor shapes do not line up for the requested operation."""


class ParameterError(ValueError):
    """An operation argument is outside its legal range."""


class ConfigError(ValueError):
    """A model or training configuration is inconsistent."""


class InputError(ValueError):
    """Input data violates a precondition (empty corpus, bad lengths, ...)."""


class ParseError(ValueError):
    """A text input could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class UsageError(Exception):
    """Bad command-line invocation."""
