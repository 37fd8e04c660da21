"""Input validation helpers shared by the public entry points."""

from __future__ import annotations

import numbers

import numpy as np


def check_points(x, name="points", dim=3):
    """Return ``x`` as a C-contiguous float array of shape (n, dim)."""
    arr = np.ascontiguousarray(x, dtype=float)
    if arr.ndim == 1 and arr.shape[0] == dim:
        arr = arr.reshape(1, dim)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name, allow_zero=False):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'>=' if allow_zero else '>'} 0, got {value!r}")
    return float(value)


def check_tolerance(value, name="tol"):
    value = check_positive(value, name)
    if value >= 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
    return value


def check_int(value, name, minimum=0):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_kappa(kappa):
    """Wavenumbers must be finite and strictly positive."""
    k = np.asarray(kappa, dtype=float)
    if not np.all(np.isfinite(k)) or np.any(k <= 0):
        raise ValueError(f"wavenumber must be finite and > 0, got {kappa!r}")
    return k


def check_vector(v, n, name="v"):
    arr = np.asarray(v)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise ValueError(f"{name} must be a vector of length {n}, got shape {arr.shape}")
    return arr


def check_choice(value, choices, name):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value
