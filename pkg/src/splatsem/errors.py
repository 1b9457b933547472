"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config errors exit 2,
format/data errors exit 3, capacity errors exit 4.
"""


class SplatsemError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SplatsemError):
    """Invalid configuration, thresholds or CLI arguments."""

    exit_code = 2


class FormatError(SplatsemError):
    """A file does not conform to its declared binary/JSON layout."""

    exit_code = 3


class DataError(SplatsemError):
    """Well-formed file with semantically invalid content (NaN, bad dims, ...)."""

    exit_code = 3


class CapacityError(SplatsemError):
    """A 2-byte index field cannot represent the requested id space."""

    exit_code = 4


class EmptySceneError(DataError):
    """Raised when filtering removes every mask; advises threshold review."""
