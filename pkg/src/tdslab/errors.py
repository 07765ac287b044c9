class TdsLabError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(TdsLabError, ValueError):
    pass


class NumericError(TdsLabError, ArithmeticError):
    pass


class ConfigError(TdsLabError, ValueError):
    pass


class FormatError(TdsLabError, ValueError):
    """A file exists but its contents do not match the expected layout."""


class SpanIOError(TdsLabError, IOError):
    pass


class UndefinedMetricError(TdsLabError, ValueError):
    """A metric has no defined value on this input (e.g. AUC with one class)."""
