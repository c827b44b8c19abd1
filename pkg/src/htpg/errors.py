"""Exception hierarchy shared across the toolkit.

The CLI maps these to exit codes: ConfigError -> 1, DataError -> 2,
InternalError (or any unexpected exception) -> 3.
"""


class HtpgError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HtpgError):
    """Invalid configuration or unusable parameter combination."""


class DataError(HtpgError):
    """Malformed or inconsistent input data (netlists, profiles, specs)."""


class InternalError(HtpgError):
    """An internal invariant was violated; indicates a bug, not bad input."""
