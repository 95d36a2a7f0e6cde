"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 3,
DataFormatError -> 4, anything else -> 5.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad values, unknown keys, inconsistent settings."""


class DataFormatError(ValueError):
    """Malformed data file: schema mismatch or an unparseable row."""


class NonFiniteError(FloatingPointError):
    """A tensor operation produced NaN or Inf."""
