"""Input validation helpers shared by the numerical modules and the estimators."""

import numbers

import numpy as np

from .exceptions import InvalidDimensionError, InvalidShapeError


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise InvalidDimensionError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def as_matrix(a, name, dtype=float, shape=None):
    """Return ``a`` as a 2-D array, checking an optional expected shape.

    ``shape`` entries set to ``None`` are not checked.
    """
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InvalidShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None:
        for got, want in zip(arr.shape, shape):
            if want is not None and got != want:
                raise InvalidShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def as_vector(a, name, dtype=float, length=None):
    arr = np.atleast_1d(np.asarray(a, dtype=dtype))
    if arr.ndim != 1:
        raise InvalidShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise InvalidShapeError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def check_sequences(X, name="X"):
    """Coerce a single sequence ``(L, H)`` or a batch ``(B, L, H)`` to 3-D float.

    Returns the batch and a flag telling whether the input was a single sequence.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim == 3:
        return arr, False
    raise InvalidShapeError(f"{name} must have 1, 2 or 3 dimensions, got {arr.ndim}")


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
