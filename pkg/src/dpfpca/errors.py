"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class DataError(ValueError):
    """Input data violates a precondition (shape, grid, clipping, parse)."""


class NumericalError(RuntimeError):
    """A numerical routine could not produce a trustworthy result."""
