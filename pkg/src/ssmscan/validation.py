"""Input-validation helpers used by every module and by the estimator API.

Arrays in this package are plain numpy ndarrays restricted to float32/float64,
row-major semantics, and finite values. These helpers centralize the checks so
operations can assume clean inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

SUPPORTED_DTYPES = (np.float32, np.float64)


def as_tensor(x, dtype=None, name: str = "array") -> np.ndarray:
    """Coerce ``x`` to a float32/float64 ndarray and verify finiteness.

    Integer and bool inputs are promoted to float64; complex and object
    arrays are rejected.
    """
    arr = np.asarray(x)
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.float64)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise DomainError(
            f"{name}: unsupported dtype {arr.dtype}; only f32/f64 tensors exist here"
        )
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_ndim(arr: np.ndarray, ndim: int, name: str = "array") -> np.ndarray:
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


def check_shape(arr: np.ndarray, shape: tuple, name: str = "array") -> np.ndarray:
    """Check shape against a template where ``None`` entries are wildcards."""
    if len(arr.shape) != len(shape) or any(
        want is not None and got != want for got, want in zip(arr.shape, shape)
    ):
        raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def check_positive(value, name: str = "value"):
    if not value > 0:
        raise DomainError(f"{name} must be positive, got {value!r}")
    return value
