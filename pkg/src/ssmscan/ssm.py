"""State-space sequence kernels.

A continuous linear state-space system

    h'(t) = A h(t) + B x(t),      y(t) = C h(t)

is discretized with a step size ``delta`` under the zero-order-hold rule

    A_bar = exp(delta A)
    B_bar = (delta A)^-1 (exp(delta A) - I) delta B

after which the same sequence map can be evaluated two mathematically
identical ways: as a linear recurrence (h_t = A_bar h_{t-1} + B_bar x_t) or
as a causal convolution with the impulse-response kernel
(C B_bar, C A_bar B_bar, C A_bar^2 B_bar, ...). Both forms live here, along
with the input-dependent (selective) scan and the gated block built on it.

Conventions: sequences are row-major (time, features); per-head transition
rates are scalars a_h < 0; the selective path discretizes B with the Euler
rule B_bar = delta * B (so a constant-parameter scan reduces exactly to the
time-invariant recurrence), while the decay keeps the exact exponential
exp(delta * a).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import scipy.linalg

from .errors import DomainError, ShapeError, SingularMatrixError
from .validation import as_tensor, check_finite, check_ndim

RMSNORM_EPS = 1e-5
CONV_WIDTH = 4


def silu(x):
    return x / (1.0 + np.exp(-x))


def softplus(x):
    return np.logaddexp(0.0, x)


def rmsnorm(x, scale, eps: float = RMSNORM_EPS):
    """Root-mean-square normalization over the last axis with a learned scale."""
    rms = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + eps)
    return x / rms * scale


# ---------------------------------------------------------------------------
# Time-invariant systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousSsm:
    """Continuous-time system (A, B, C) with step size delta.

    ``a`` may be a dense (N, N) matrix or an (N,) vector meaning diagonal
    storage; ``b`` and ``c`` are length-N vectors. Treat instances as
    immutable values.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "a", as_tensor(self.a, np.float64, "A"))
        object.__setattr__(self, "b", as_tensor(self.b, np.float64, "B").reshape(-1))
        object.__setattr__(self, "c", as_tensor(self.c, np.float64, "C").reshape(-1))
        n = self.state_size
        if self.a.ndim == 2 and self.a.shape != (n, n):
            raise ShapeError(f"A has shape {self.a.shape}, expected ({n}, {n})")
        if self.a.ndim not in (1, 2):
            raise ShapeError(f"A must be a matrix or a diagonal vector, got {self.a.shape}")
        if len(self.b) != n or len(self.c) != n:
            raise ShapeError(
                f"B ({self.b.shape}) and C ({self.c.shape}) must match state size {n}"
            )

    @property
    def state_size(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class DiscreteSsm:
    """Discretized system (A_bar, B_bar, C); A_bar diagonal when 1-D."""

    a_bar: np.ndarray
    b_bar: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a_bar", as_tensor(self.a_bar, np.float64, "A_bar"))
        object.__setattr__(self, "b_bar", as_tensor(self.b_bar, np.float64, "B_bar").reshape(-1))
        object.__setattr__(self, "c", as_tensor(self.c, np.float64, "C").reshape(-1))

    @property
    def state_size(self) -> int:
        return self.a_bar.shape[0]


@dataclass(frozen=True)
class SsmKernel:
    """Impulse-response kernel k_j = C A_bar^j B_bar for j < length."""

    k: np.ndarray
    length: int

    def __post_init__(self):
        object.__setattr__(self, "k", as_tensor(self.k, None, "kernel").reshape(-1))
        if len(self.k) != self.length:
            raise ShapeError(f"kernel length {len(self.k)} != declared {self.length}")


def zoh_discretize(sys: ContinuousSsm) -> DiscreteSsm:
    """Zero-order-hold discretization.

    Diagonal systems use the entrywise closed form
    ``a_bar_i = exp(delta a_i)``, ``b_bar_i = (exp(delta a_i) - 1) / a_i * b_i``
    with the analytic limit ``b_bar_i = delta * b_i`` at ``a_i = 0``. Dense
    systems use the matrix exponential and an LU solve; a singular A is
    reported with its failing pivot.
    """
    if not sys.delta > 0:
        raise DomainError(f"zoh discretization requires delta > 0, got {sys.delta}")
    delta = float(sys.delta)
    if sys.a.ndim == 1:
        a_bar = np.exp(delta * sys.a)
        b_bar = np.empty_like(sys.b)
        nonzero = sys.a != 0.0
        b_bar[nonzero] = (a_bar[nonzero] - 1.0) / sys.a[nonzero] * sys.b[nonzero]
        b_bar[~nonzero] = delta * sys.b[~nonzero]
        return DiscreteSsm(a_bar, b_bar, sys.c)

    a_bar = scipy.linalg.expm(delta * sys.a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # singularity is reported below, with the pivot
        lu, piv = scipy.linalg.lu_factor(sys.a, check_finite=False)
    diag = np.abs(np.diag(lu))
    tiny = np.finfo(np.float64).eps * max(1.0, float(np.max(diag, initial=0.0))) * sys.state_size
    bad = np.nonzero(diag <= tiny)[0]
    if bad.size:
        raise SingularMatrixError(
            f"state matrix is singular: pivot {int(bad[0])} has magnitude {diag[bad[0]]:.3e}"
        )
    rhs = (a_bar - np.eye(sys.state_size)) @ sys.b
    b_bar = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    return DiscreteSsm(a_bar, b_bar, sys.c)


def ssm_recurrent(d: DiscreteSsm, x) -> np.ndarray:
    """Evaluate the recurrence h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t.

    The hidden state starts at zero; output t depends on x_1..x_t only.
    """
    x = as_tensor(x, np.float64, "input sequence").reshape(-1)
    if len(x) < 1:
        raise ShapeError("input sequence must have length >= 1")
    diagonal = d.a_bar.ndim == 1
    h = np.zeros(d.state_size)
    y = np.empty(len(x))
    for t, xt in enumerate(x):
        h = (d.a_bar * h if diagonal else d.a_bar @ h) + d.b_bar * xt
        y[t] = d.c @ h
    return y


def ssm_kernel(d: DiscreteSsm, length: int) -> SsmKernel:
    """Build the convolution kernel by iterated state propagation.

    No explicit matrix powers: the running vector s_j = A_bar^j B_bar is
    advanced one step at a time and dotted with C.
    """
    if length < 1:
        raise ShapeError(f"kernel length must be >= 1, got {length}")
    diagonal = d.a_bar.ndim == 1
    s = d.b_bar.copy()
    k = np.empty(length)
    for j in range(length):
        k[j] = d.c @ s
        s = d.a_bar * s if diagonal else d.a_bar @ s
    return SsmKernel(k, length)


def ssm_conv(x, kernel: SsmKernel) -> np.ndarray:
    """Causal convolution y_t = sum_{j<=t} k_j x_{t-j} (kernel zero-padded or
    truncated to the sequence length as needed)."""
    x = as_tensor(x, None, "input sequence").reshape(-1)
    y = np.convolve(x, kernel.k)[: len(x)]
    return check_finite(y, "convolution output")


# ---------------------------------------------------------------------------
# Selective (input-dependent) scan
# ---------------------------------------------------------------------------


def _scan_step(state, xh_t, decay_t, delta_t, b_t, c_t):
    """One scan step shared by the sequence evaluator and the decode stepper.

    state (H, P, N); xh_t (H, P); decay_t, delta_t (H,); b_t, c_t (H, N).
    """
    state = decay_t[:, None, None] * state + (delta_t[:, None] * xh_t)[:, :, None] * b_t[:, None, :]
    y = np.einsum("hpn,hn->hp", state, c_t)
    return state, y


def _expand_bc(arr, n_heads, name):
    arr = as_tensor(arr, None, name)
    if arr.ndim == 2:
        return np.broadcast_to(arr[:, None, :], (arr.shape[0], n_heads, arr.shape[1]))
    if arr.ndim == 3:
        if arr.shape[1] != n_heads:
            raise ShapeError(f"{name} has {arr.shape[1]} heads, expected {n_heads}")
        return arr
    raise ShapeError(f"{name} must be (L, N) or (L, H, N), got {arr.shape}")


def selective_scan(x, delta, b_t, c_t, a, d_skip) -> np.ndarray:
    """Input-dependent scan over heads of channels.

    For head h and each channel c it evolves an N-vector state

        s_t = exp(delta_{t,h} a_h) s_{t-1} + delta_{t,h} B_t x_{t,c}
        y_{t,c} = C_t . s_t + d_skip_h x_{t,c}

    x: (L, D_inner) with D_inner split evenly over the heads; delta: (L, H),
    strictly positive; b_t, c_t: (L, N) shared across heads or (L, H, N)
    per-head; a: (H,) negative rates; d_skip: (H,) skip weights. Output is
    linear in x for fixed (delta, B, C).
    """
    x = as_tensor(x, None, "scan input")
    check_ndim(x, 2, "scan input")
    delta = as_tensor(delta, None, "delta")
    a = as_tensor(a, None, "a").reshape(-1)
    d_skip = as_tensor(d_skip, None, "d_skip").reshape(-1)
    seq_len, d_inner = x.shape
    n_heads = len(a)
    if d_inner % n_heads:
        raise ShapeError(f"{n_heads} heads do not evenly divide {d_inner} channels")
    if delta.shape != (seq_len, n_heads):
        raise ShapeError(f"delta has shape {delta.shape}, expected ({seq_len}, {n_heads})")
    if np.any(delta <= 0):
        raise DomainError("selective scan requires strictly positive step sizes")
    if len(d_skip) != n_heads:
        raise ShapeError(f"d_skip has length {len(d_skip)}, expected {n_heads}")
    b3 = _expand_bc(b_t, n_heads, "B_t")
    c3 = _expand_bc(c_t, n_heads, "C_t")
    per_head = d_inner // n_heads
    n_state = b3.shape[-1]

    xh = x.reshape(seq_len, n_heads, per_head)
    decay = np.exp(delta * a)  # (L, H)
    state = np.zeros((n_heads, per_head, n_state), dtype=x.dtype)
    out = np.empty((seq_len, n_heads, per_head), dtype=x.dtype)
    for t in range(seq_len):
        state, out[t] = _scan_step(state, xh[t], decay[t], delta[t], b3[t], c3[t])
    y = out.reshape(seq_len, d_inner) + x * np.repeat(d_skip, per_head)
    return check_finite(y, "scan output")


# ---------------------------------------------------------------------------
# Gated block
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mamba2BlockWeights:
    """All learnable arrays of one gated scan block.

    The single input projection maps d_model to, in order: gate z (d_inner),
    inner channels (d_inner), per-head B (n_heads * state_size), per-head C
    (n_heads * state_size), and raw per-head step sizes (n_heads). a_log
    stores the per-head rate as a_h = -exp(a_log_h) < 0.
    """

    d_model: int
    d_inner: int
    n_heads: int
    state_size: int
    in_proj: np.ndarray    # (d_model, proj_width)
    conv: np.ndarray       # (d_inner, CONV_WIDTH), tap j multiplies x[t-j]
    a_log: np.ndarray      # (n_heads,)
    dt_bias: np.ndarray    # (n_heads,)
    d_skip: np.ndarray     # (n_heads,)
    out_proj: np.ndarray   # (d_inner, d_model)
    norm_scale: np.ndarray  # (d_model,)

    @property
    def proj_width(self) -> int:
        return 2 * self.d_inner + 2 * self.n_heads * self.state_size + self.n_heads

    def __post_init__(self):
        if self.d_inner % self.n_heads:
            raise ShapeError(
                f"{self.n_heads} heads do not evenly divide d_inner={self.d_inner}"
            )
        expected = {
            "in_proj": (self.d_model, self.proj_width),
            "conv": (self.d_inner, CONV_WIDTH),
            "a_log": (self.n_heads,),
            "dt_bias": (self.n_heads,),
            "d_skip": (self.n_heads,),
            "out_proj": (self.d_inner, self.d_model),
            "norm_scale": (self.d_model,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")

    def rates(self) -> np.ndarray:
        """Per-head transition rates a_h = -exp(a_log_h), always negative."""
        return -np.exp(self.a_log)

    def to_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {
            f"{prefix}dims": np.array(
                [self.d_model, self.d_inner, self.n_heads, self.state_size],
                dtype=np.float64,
            )
        }
        for name in ("in_proj", "conv", "a_log", "dt_bias", "d_skip", "out_proj", "norm_scale"):
            out[f"{prefix}{name}"] = getattr(self, name)
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], prefix: str = "") -> "Mamba2BlockWeights":
        dims = arrays[f"{prefix}dims"].astype(int)
        fields = {
            name: arrays[f"{prefix}{name}"]
            for name in ("in_proj", "conv", "a_log", "dt_bias", "d_skip", "out_proj", "norm_scale")
        }
        return cls(int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3]), **fields)


def init_mamba2_weights(
    d_model: int,
    rng: np.random.Generator,
    *,
    d_inner: Optional[int] = None,
    n_heads: int = 4,
    state_size: int = 8,
    dtype=np.float64,
) -> Mamba2BlockWeights:
    """Random block weights.

    Step sizes are parameterized so softplus(dt_bias) lands in [1e-3, 1e-1];
    rates start at a_h = -exp(u) with u uniform in [log 0.5, log 2], i.e.
    order-one decay. Projections are scaled Gaussians, skip weights start at
    one.
    """
    d_inner = 2 * d_model if d_inner is None else d_inner
    if d_inner % n_heads:
        raise ShapeError(f"{n_heads} heads do not evenly divide d_inner={d_inner}")
    proj_width = 2 * d_inner + 2 * n_heads * state_size + n_heads
    dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=n_heads))
    return Mamba2BlockWeights(
        d_model=d_model,
        d_inner=d_inner,
        n_heads=n_heads,
        state_size=state_size,
        in_proj=(rng.standard_normal((d_model, proj_width)) / np.sqrt(d_model)).astype(dtype),
        conv=(rng.standard_normal((d_inner, CONV_WIDTH)) / np.sqrt(CONV_WIDTH)).astype(dtype),
        a_log=rng.uniform(np.log(0.5), np.log(2.0), size=n_heads).astype(dtype),
        dt_bias=np.log(np.expm1(dt)).astype(dtype),
        d_skip=np.ones(n_heads, dtype=dtype),
        out_proj=(rng.standard_normal((d_inner, d_model)) / np.sqrt(d_inner)).astype(dtype),
        norm_scale=np.ones(d_model, dtype=dtype),
    )


def zero_mamba2_weights(d_model: int, *, d_inner=None, n_heads=4, state_size=8, dtype=np.float64):
    """All-zero weights; the block then reduces to the identity (pure residual)."""
    d_inner = 2 * d_model if d_inner is None else d_inner
    proj_width = 2 * d_inner + 2 * n_heads * state_size + n_heads
    zeros = lambda *shape: np.zeros(shape, dtype=dtype)
    return Mamba2BlockWeights(
        d_model, d_inner, n_heads, state_size,
        in_proj=zeros(d_model, proj_width),
        conv=zeros(d_inner, CONV_WIDTH),
        a_log=zeros(n_heads),
        dt_bias=zeros(n_heads),
        d_skip=zeros(n_heads),
        out_proj=zeros(d_inner, d_model),
        norm_scale=zeros(d_model),
    )


def causal_depthwise_conv(x, filt) -> np.ndarray:
    """Per-channel causal FIR filter: y[t, c] = sum_j filt[c, j] x[t-j, c]."""
    out = x * filt[:, 0]
    for j in range(1, filt.shape[1]):
        out[j:] += x[:-j] * filt[:, j]
    return out


def _split_proj(proj, w: Mamba2BlockWeights):
    d_inner, n_heads, n_state = w.d_inner, w.n_heads, w.state_size
    seq_len = proj.shape[0]
    z = proj[:, :d_inner]
    inner = proj[:, d_inner : 2 * d_inner]
    at = 2 * d_inner
    b_t = proj[:, at : at + n_heads * n_state].reshape(seq_len, n_heads, n_state)
    at += n_heads * n_state
    c_t = proj[:, at : at + n_heads * n_state].reshape(seq_len, n_heads, n_state)
    dt_raw = proj[:, at + n_heads * n_state :]
    return z, inner, b_t, c_t, dt_raw


def mamba2_block(x, w: Mamba2BlockWeights) -> np.ndarray:
    """Pre-norm residual gated-scan block over a (L, d_model) sequence.

    normalize -> project to (z, inner, B, C, dt) -> causal width-4 depthwise
    filter and SiLU on the inner channels -> selective scan with
    delta = softplus(dt + dt_bias) -> gate by SiLU(z) -> out-project -> add
    the residual. Causal by construction.
    """
    x = as_tensor(x, None, "block input")
    check_ndim(x, 2, "block input")
    if x.shape[1] != w.d_model:
        raise ShapeError(f"block input width {x.shape[1]} != d_model {w.d_model}")
    u = rmsnorm(x, w.norm_scale)
    z, inner, b_t, c_t, dt_raw = _split_proj(u @ w.in_proj, w)
    inner = silu(causal_depthwise_conv(inner, w.conv))
    delta = softplus(dt_raw + w.dt_bias)
    y = selective_scan(inner, delta, b_t, c_t, w.rates(), w.d_skip)
    y = y * silu(z)
    return check_finite(x + y @ w.out_proj, "block output")


class Mamba2StepState:
    """Constant-size per-block decode state: the width-3 filter tail and the
    (heads, channels, state) scan tensor. This is the *entire* memory a block
    keeps during generation, independent of how many tokens it has seen."""

    def __init__(self, w: Mamba2BlockWeights, dtype=np.float64):
        per_head = w.d_inner // w.n_heads
        self.conv_tail = np.zeros((CONV_WIDTH - 1, w.d_inner), dtype=dtype)
        self.scan_state = np.zeros((w.n_heads, per_head, w.state_size), dtype=dtype)


def mamba2_step(x_t, w: Mamba2BlockWeights, state: Mamba2StepState) -> np.ndarray:
    """Process one token through the block, updating ``state`` in place.

    Produces exactly the same sequence of scan updates as mamba2_block
    applied to the full prefix (floating-point differences are limited to
    BLAS reduction order inside the projections).
    """
    x_t = as_tensor(x_t, None, "step input").reshape(-1)
    u = rmsnorm(x_t, w.norm_scale)
    z, inner, b_t, c_t, dt_raw = _split_proj((u @ w.in_proj)[None, :], w)
    inner = inner[0]
    conv = inner * w.conv[:, 0]
    for j in range(1, CONV_WIDTH):
        conv += state.conv_tail[CONV_WIDTH - 1 - j] * w.conv[:, j]
    state.conv_tail[:-1] = state.conv_tail[1:]
    state.conv_tail[-1] = inner
    gated_in = silu(conv)
    delta = softplus(dt_raw[0] + w.dt_bias)
    decay = np.exp(delta * w.rates())
    per_head = w.d_inner // w.n_heads
    xh = gated_in.reshape(w.n_heads, per_head)
    state.scan_state, y = _scan_step(state.scan_state, xh, decay, delta, b_t[0], c_t[0])
    y = y.reshape(-1) + gated_in * np.repeat(w.d_skip, per_head)
    y = y * silu(z[0])
    return check_finite(x_t + y @ w.out_proj, "step output")
