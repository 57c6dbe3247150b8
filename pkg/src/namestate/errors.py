class DataError(Exception):
    """Input data is missing, malformed, or inconsistent."""


class NumericError(Exception):
    """Training produced a non-finite value."""
