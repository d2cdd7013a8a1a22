"""Exception hierarchy shared across the package."""


class GKCMError(Exception):
    """Base class for all errors raised by gkcm."""


class ConfigError(GKCMError, ValueError):
    """Invalid or inconsistent configuration."""


class SelectorError(ConfigError):
    """A column selector refers to a column that does not exist."""


class ParseError(GKCMError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DimensionError(GKCMError, ValueError):
    """Array shapes do not agree."""


class DegenerateDataError(GKCMError, ValueError):
    """Data is degenerate for the requested operation (constant columns, identical rows, ...)."""


class TooFewSamplesError(GKCMError, ValueError):
    pass


class NumericalError(GKCMError, ArithmeticError):
    """A numerical routine failed (factorization, eigensolve, root bracketing)."""
