"""Global float precision switch.

float64 is the reference precision: every numeric oracle and gradient
tolerance in the test suite assumes it. float32 is an opt-in for speed
runs (bench, ablation smoke) and is never used for correctness claims.
"""

import numpy as np

from .errors import ConfigError

_ALLOWED = (np.float64, np.float32)
_default = np.float64


def default_dtype() -> np.dtype:
    return np.dtype(_default)


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt.type not in _ALLOWED:
        raise ConfigError(f"unsupported dtype {dt}; use float64 or float32")
    global _default
    _default = dt.type


def asarray(x) -> np.ndarray:
    """Coerce to the current default float dtype (copies only if needed)."""
    return np.asarray(x, dtype=default_dtype())
