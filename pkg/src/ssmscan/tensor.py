"""Dense-tensor substrate.

Values are numpy ndarrays (row-major, f32 or f64, always finite), treated as
immutable once constructed: operations return fresh arrays and never mutate
their inputs, so values are safe to share across threads. f64 is the
verification dtype used by every tolerance-bearing test; f32 is the benchmark
dtype. The numerical backend is numpy/BLAS, which is deterministic run-to-run
on a fixed machine; byte-level reproducibility is only promised for the
serialization layer (see tensorio), not for the order of floating-point
reductions inside matmul.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .validation import as_tensor, check_finite

F32 = np.dtype(np.float32)
F64 = np.dtype(np.float64)

DTYPE_CODES = {F32: 0, F64: 1}
CODE_DTYPES = {0: F32, 1: F64}


def matmul(a, b) -> np.ndarray:
    """Matrix product of two 2-D tensors with explicit shape checking.

    Raises ShapeError naming both shapes when the inner dimensions disagree.
    """
    a = as_tensor(a, name="matmul lhs")
    b = as_tensor(b, name="matmul rhs")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape} by {b.shape}: inner dimensions "
            f"{a.shape[1]} != {b.shape[0]}"
        )
    out = a @ b
    return check_finite(out, "matmul result")
