"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI:
  ConfigError -> 1, DataError (incl. ParseError) -> 2, NumericError -> 3
"""


class ConfigError(Exception):
    """Invalid configuration or usage."""


class DataError(Exception):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """Malformed input file; message names the offending line."""


class NumericError(Exception):
    """Non-finite values or an autodiff contract violation."""
