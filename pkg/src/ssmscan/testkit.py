"""Brute-force oracles for the verification suite.

Every function here deliberately uses a *different* algorithm from the
operation it checks (explicit loops instead of vectorized kernels, matrix
powers instead of iterated state propagation), so an agreement between the
two is evidence, not tautology. Nothing in this module is performance code
and none of it is ever timed by the benchmark harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product; the reference for the BLAS-backed matmul."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.result_type(a, b))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def naive_conv(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Causal convolution by explicit double loop: y_t = sum_{j<=t} k_j x_{t-j}."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    n = len(x)
    y = np.zeros(n)
    for t in range(n):
        acc = 0.0
        for j in range(t + 1):
            if j < len(k):
                acc += k[j] * x[t - j]
        y[t] = acc
    return y


def kernel_by_matrix_power(d, length: int) -> np.ndarray:
    """Impulse-response kernel via explicit matrix powers: k_j = C A^j B.

    ``d`` is a DiscreteSsm; diagonal transition vectors are densified first so
    the power really is a matrix power. Guarded to short kernels because the
    cost is intentionally unoptimized.
    """
    if length > 64:
        raise DomainError(f"oracle kernel length capped at 64, got {length}")
    a_bar = np.asarray(d.a_bar, dtype=np.float64)
    if a_bar.ndim == 1:
        a_bar = np.diag(a_bar)
    b_bar = np.asarray(d.b_bar, dtype=np.float64).reshape(-1)
    c = np.asarray(d.c, dtype=np.float64).reshape(-1)
    out = np.empty(length)
    for j in range(length):
        out[j] = c @ np.linalg.matrix_power(a_bar, j) @ b_bar
    return out


@dataclass(frozen=True)
class FiniteDiffSpec:
    """Central finite-difference settings (f64 only)."""

    step: float = 1e-5

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError(f"finite-difference step must be positive, got {self.step}")


def finite_diff_grad(f, x: np.ndarray, spec: FiniteDiffSpec = FiniteDiffSpec()) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    h = spec.step
    for i in range(x.size):
        xp = x.copy().ravel()
        xm = x.copy().ravel()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def selective_scan_reference(x, delta, b_t, c_t, a, d_skip):
    """Scalar-loop reference for the selective scan (no vectorization).

    Shapes follow the production op: x (L, D_inner), delta (L, H), b_t/c_t
    (L, N) or (L, H, N), a (H,), d_skip (H,).
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    b_t = np.asarray(b_t, dtype=np.float64)
    c_t = np.asarray(c_t, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    d_skip = np.asarray(d_skip, dtype=np.float64)
    seq_len, d_inner = x.shape
    n_heads = len(a)
    per_head = d_inner // n_heads
    n_state = b_t.shape[-1]
    if b_t.ndim == 2:
        b_t = np.repeat(b_t[:, None, :], n_heads, axis=1)
    if c_t.ndim == 2:
        c_t = np.repeat(c_t[:, None, :], n_heads, axis=1)
    out = np.zeros_like(x)
    for h in range(n_heads):
        for c in range(per_head):
            ch = h * per_head + c
            state = np.zeros(n_state)
            for t in range(seq_len):
                decay = np.exp(delta[t, h] * a[h])
                state = decay * state + delta[t, h] * b_t[t, h] * x[t, ch]
                out[t, ch] = float(c_t[t, h] @ state) + d_skip[h] * x[t, ch]
    return out


def perturbation_causality_gap(fn, x: np.ndarray, position: int, rng) -> float:
    """Max |change| in outputs strictly before ``position`` after perturbing
    the input at ``position`` and everything after it."""
    base = fn(x)
    bumped = x.copy()
    bumped[position:] += rng.standard_normal(bumped[position:].shape)
    other = fn(bumped)
    if position == 0:
        return 0.0
    return float(np.max(np.abs(other[:position] - base[:position])))
