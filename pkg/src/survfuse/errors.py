"""Exception types shared across the package."""


class SurvfuseError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SurvfuseError):
    """Operand shapes are incompatible with the requested operation."""


class ParseError(SurvfuseError):
    """Malformed input text; carries file/line context in the message."""


class DataError(SurvfuseError):
    """Inconsistent or invalid data content (ids, widths, labels, checksums)."""


class ConfigError(SurvfuseError):
    """Contradictory or unusable configuration; maps to CLI exit code 2."""


class NumericError(SurvfuseError):
    """A numeric quantity left the finite domain (NaN/inf)."""


class UndefinedResultError(SurvfuseError):
    """The requested statistic is undefined for the given input."""


class UsageError(SurvfuseError):
    """An API object was used outside its lifecycle contract."""
