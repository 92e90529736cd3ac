"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific type that applies rather than a bare ValueError.
"""


class MarginLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MarginLabError, ValueError):
    """Operands have incompatible or unexpected dimensions."""


class DegenerateInputError(MarginLabError, ValueError):
    """Numerically degenerate input: zero-norm vectors, non-finite entries,
    or rows violating a unit-norm precondition."""


class ConfigError(MarginLabError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class ParseError(MarginLabError, ValueError):
    """Malformed content in a text input file.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(MarginLabError, RuntimeError):
    """A computation produced a non-finite result or failed a numerical check."""
