"""Input validation helpers shared across modules."""
from __future__ import annotations

import numbers

import numpy as np


def check_param_vector(x, dim: int, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite float64 vector of length ``dim``.

    Scalars are accepted for one-dimensional models.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    if arr.shape[0] != dim:
        raise ValueError(f"{name} has length {arr.shape[0]}, model dimension is {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite components")
    return arr


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


def check_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_index(i, size: int, name: str = "i") -> int:
    if isinstance(i, bool) or not isinstance(i, numbers.Integral) or not 0 <= i < size:
        raise ValueError(f"{name} must be an integer in [0, {size}), got {i!r}")
    return int(i)
