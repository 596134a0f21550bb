"""Kolmogorov-Arnold convolution layers and networks on plain numpy.

The package is organized as a functional core (tensor_ops, activations,
kaconv) with explicit forward/backward pairs, layer and network assembly
on top (network), and desk-scale training utilities (datasets, checkpoint,
training). The `kaconv` console script exposes the whole thing.

This module deliberately imports nothing that pulls in numpy: the CLI
relies on setting thread-count environment variables before BLAS loads,
which only works if importing the bare package stays cheap.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    KaconvError,
    NumericsError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FormatError",
    "KaconvError",
    "NumericsError",
    "__version__",
]
