"""2D patch-grid scan orders.

A scan order is a permutation of the row-major indices of a (rows, cols)
token grid: ``forward[s]`` names the grid index that lands at sequence
position ``s``, and ``inverse`` undoes it. The bidirectional mechanism reads
the grid row-major forward and backward; the cross mechanism adds the
column-major pair, giving four unfoldings of the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ShapeError
from .validation import check_positive

BIDIRECTIONAL = "bsm"
CROSS = "csm"
MECHANISMS = (BIDIRECTIONAL, CROSS)


@dataclass(frozen=True)
class ScanOrder:
    """A bijection on grid indices together with its inverse."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward) -> "ScanOrder":
        forward = np.asarray(forward, dtype=np.intp)
        n = len(forward)
        if not np.array_equal(np.sort(forward), np.arange(n)):
            raise ShapeError("forward order is not a permutation")
        inverse = np.empty(n, dtype=np.intp)
        inverse[forward] = np.arange(n)
        return cls(forward, inverse)

    def __len__(self) -> int:
        return len(self.forward)


def bidirectional_orders(rows: int, cols: int) -> List[ScanOrder]:
    """Row-major forward (identity) and its exact reversal."""
    check_positive(rows, "rows")
    check_positive(cols, "cols")
    fwd = np.arange(rows * cols, dtype=np.intp)
    return [ScanOrder.from_forward(fwd), ScanOrder.from_forward(fwd[::-1])]


def cross_orders(rows: int, cols: int) -> List[ScanOrder]:
    """Four unfoldings: row-major forward/backward, column-major forward/backward."""
    check_positive(rows, "rows")
    check_positive(cols, "cols")
    row_fwd = np.arange(rows * cols, dtype=np.intp)
    col_fwd = row_fwd.reshape(rows, cols).T.ravel()
    return [
        ScanOrder.from_forward(row_fwd),
        ScanOrder.from_forward(row_fwd[::-1]),
        ScanOrder.from_forward(col_fwd),
        ScanOrder.from_forward(col_fwd[::-1]),
    ]


def scan_orders(mechanism: str, rows: int, cols: int) -> List[ScanOrder]:
    if mechanism == BIDIRECTIONAL:
        return bidirectional_orders(rows, cols)
    if mechanism == CROSS:
        return cross_orders(rows, cols)
    raise ShapeError(f"unknown scan mechanism {mechanism!r}; use one of {MECHANISMS}")


def apply_scan(tokens: np.ndarray, order: ScanOrder) -> np.ndarray:
    """Reorder grid tokens into sequence order (bit-exact gather)."""
    if tokens.shape[0] != len(order):
        raise ShapeError(
            f"{tokens.shape[0]} tokens do not match scan order of size {len(order)}"
        )
    return tokens[order.forward]


def inverse_scan(seq: np.ndarray, order: ScanOrder) -> np.ndarray:
    """Put a scanned sequence back into grid (row-major) order."""
    if seq.shape[0] != len(order):
        raise ShapeError(
            f"{seq.shape[0]} sequence items do not match scan order of size {len(order)}"
        )
    return seq[order.inverse]
