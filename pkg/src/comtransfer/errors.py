"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Bad input: shapes, ranges, ids out of bounds, malformed files."""


class NumericalError(RuntimeError):
    """Training diverged or produced non-finite values."""
