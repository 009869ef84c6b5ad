"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, DataError exits 2,
NumericError exits 3.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, calibration, archives)."""


class NumericError(RuntimeError):
    """Non-finite values or diverging optimization."""
