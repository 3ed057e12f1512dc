"""Exception types shared across the library.

The CLI maps these onto distinct exit codes: configuration problems
(including incompatible shapes between inputs) exit 1, malformed data
files exit 2, and numerical aborts during training exit 3.
"""


class UrsaError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(UrsaError):
    """Invalid configuration value, flag combination, or input mismatch."""


class DataError(UrsaError):
    """Malformed or inconsistent data file (IDX images or cloud archive)."""


class NumericalAbort(UrsaError):
    """Training produced a non-finite loss and was stopped."""
