"""Exception types shared across the package."""


class PasndrError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PasndrError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(PasndrError, ValueError):
    """Input data carries no usable information (e.g. zero power)."""


class NumericError(PasndrError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""


class GridRangeError(PasndrError, ValueError):
    """A query lies outside the tabulated IBO range."""


class OptimizationError(NumericError):
    """Neither the primary nor the fallback optimizer converged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BracketError(OptimizationError):
    """The maximum of a tabulated objective sits on a grid endpoint."""


class StorageError(PasndrError, OSError):
    """Writing a cache or output file failed.

    The computed object, if any, is attached as ``result`` so callers
    can keep working with it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
