"""Input validation helpers shared by estimators and numeric operations."""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "check_finite",
    "check_positive",
    "check_fraction",
    "as_float_array",
    "check_matrix",
    "check_X_y",
    "check_consistent_length",
]


def check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def check_positive(name: str, value: float, strict: bool = True) -> float:
    value = check_finite(name, value)
    if strict and value <= 0.0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0.0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return value


def check_fraction(name: str, value: float, include_zero: bool = False) -> float:
    value = check_finite(name, value)
    lo_ok = value >= 0.0 if include_zero else value > 0.0
    if not (lo_ok and value <= 1.0):
        bound = "[0, 1]" if include_zero else "(0, 1]"
        raise ValueError(f"{name} must be in {bound}, got {value!r}")
    return value


def as_float_array(x, name: str = "array", min_len: int = 0) -> np.ndarray:
    """1-D float array with finiteness and length checks."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_matrix(X, name: str = "X") -> np.ndarray:
    """2-D float matrix with at least one column, all values finite."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[1] == 0:
        raise ValueError(f"{name} has an empty feature set")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_X_y(X, y, min_rows: int = 1) -> tuple[np.ndarray, np.ndarray]:
    X = check_matrix(X)
    y = as_float_array(y, "y")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X and y disagree on row count: {X.shape[0]} vs {y.shape[0]}")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {X.shape[0]}")
    return X, y


def check_consistent_length(*arrays) -> int:
    lengths = {np.asarray(a).shape[0] for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"inputs have inconsistent lengths: {sorted(lengths)}")
    return lengths.pop()
