"""Small input-checking helpers in the spirit of sklearn.utils.validation."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import DataError, DomainError


def check_probability(p, name="p"):
    """Return ``p`` as a float array, raising DomainError outside [0, 1]."""
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return arr


def check_finite_vector(x, name, ndim=1, nonneg=False):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} must be finite")
    if nonneg and np.any(arr < 0.0):
        raise DataError(f"{name} must be nonnegative")
    return arr


def check_random_state(seed):
    """Turn ``seed`` into a numpy Generator.

    Accepts None, an int, a SeedSequence or an existing Generator.
    """
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.Generator):
        return seed
    raise DataError(f"cannot build a random generator from {seed!r}")
