"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class SS3MError(Exception):
    """Base class for all package errors."""


class ConfigError(SS3MError):
    """Invalid configuration or usage."""


class DataError(SS3MError):
    """Malformed or incompatible input data."""


class VersionError(DataError):
    """Serialized artifact has an incompatible format version."""


class NumericalError(SS3MError):
    """Non-finite quantity where a finite one is required."""


class SamplingError(NumericalError):
    """A conditional distribution could not be normalized (corrupt state)."""


class DimensionError(SS3MError):
    """Mismatched array dimensions."""


class UndefinedMetricError(SS3MError):
    """A metric is undefined for the given truth vector (degenerate labels)."""


class OptimizationError(NumericalError):
    """An optimizer failed to make progress."""
