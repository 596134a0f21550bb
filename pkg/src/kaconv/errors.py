"""Exception taxonomy shared across the package.

Every raise in the library uses one of these so callers (and the CLI) can
distinguish a bad tensor shape from a bad config file from a corrupt
checkpoint without string matching.
"""


class KaconvError(Exception):
    """Base class for all library errors."""


class DimensionError(KaconvError, ValueError):
    """Tensor rank/extent mismatch at an operation boundary."""


class ConfigError(KaconvError, ValueError):
    """Invalid hyperparameter, layer wiring, or config file contents."""


class ContractError(KaconvError, RuntimeError):
    """A backward cache was replayed against the wrong forward."""


class FormatError(KaconvError, ValueError):
    """A binary container (checkpoint, dataset file) is malformed."""


class NumericsError(KaconvError, FloatingPointError):
    """A loss or gradient went non-finite during optimization."""


class DataError(KaconvError, ValueError):
    """Dataset contents are out of contract (bad labels, truncation)."""
