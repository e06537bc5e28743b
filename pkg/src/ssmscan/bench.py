"""Latency harness: linear-scan path vs an explicitly quadratic attention
baseline.

The point being measured is scaling, not absolute speed: forward wall time of
the gated-scan block should grow ~linearly in sequence length while the
attention baseline (which materializes the full L x L score matrix, head by
head) grows ~quadratically, and per-token decode cost should be flat in
context length for the scan path but grow for attention. Timed sections run
with BLAS pinned to one thread; inputs are seeded and shared across model
kinds at equal length, with outputs checked bit-identical across repeats.

Throughput is reported as tokens per second (generated tokens divided by
total wall time).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DomainError, ShapeError
from .lm import MambaLm, ToyLmConfig
from .rng import generator
from .ssm import Mamba2StepState, init_mamba2_weights, mamba2_block, mamba2_step
from .validation import as_tensor, check_ndim

MODEL_KINDS = ("ssm", "attention")
WARMUPS = 2
DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096, 8192)
CSV_HEADER = "model_kind,L,D,repeats,t_min,t_median,t_max,tokens_per_sec"


def eval_avg(n_tokens: int, t_total: float) -> float:
    """Generated-token throughput: tokens divided by total seconds."""
    if not t_total > 0:
        raise DomainError(f"total time must be positive, got {t_total}")
    return n_tokens / t_total


# ---------------------------------------------------------------------------
# Quadratic attention baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionBaselineWeights:
    """Single-layer causal multi-head self-attention parameters."""

    n_heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be ({d}, {d}), got {getattr(self, name).shape}")
        if d % self.n_heads:
            raise ShapeError(f"{self.n_heads} heads do not divide width {d}")

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def init_attention_weights(d_model: int, rng: np.random.Generator, *, n_heads: int = 4,
                           dtype=np.float64) -> AttentionBaselineWeights:
    mk = lambda: (rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)).astype(dtype)
    return AttentionBaselineWeights(n_heads, mk(), mk(), mk(), mk())


def attention_forward(x, w: AttentionBaselineWeights) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_head) + causal mask) V, out-projected.

    The (L, L) score matrix is materialized per head on purpose; softmax is
    stabilized by max subtraction. O(L^2) time and memory.
    """
    x = as_tensor(x, None, "attention input")
    check_ndim(x, 2, "attention input")
    if x.shape[1] != w.d_model:
        raise ShapeError(f"input width {x.shape[1]} != d_model {w.d_model}")
    seq_len, d = x.shape
    dh = w.head_dim
    q = (x @ w.wq).reshape(seq_len, w.n_heads, dh)
    k = (x @ w.wk).reshape(seq_len, w.n_heads, dh)
    v = (x @ w.wv).reshape(seq_len, w.n_heads, dh)
    inv_sqrt = np.asarray(1.0 / math.sqrt(dh), dtype=x.dtype)
    future = np.arange(seq_len)[None, :] > np.arange(seq_len)[:, None]
    out = np.empty_like(x).reshape(seq_len, w.n_heads, dh)
    for h in range(w.n_heads):
        scores = (q[:, h] @ k[:, h].T) * inv_sqrt
        scores[future] = -np.inf
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        out[:, h] = scores @ v[:, h]
    return out.reshape(seq_len, d) @ w.wo


class AttentionCache:
    """Grow-only K/V cache for incremental decoding."""

    def __init__(self, w: AttentionBaselineWeights, capacity: int, dtype=np.float64):
        self.k = np.zeros((capacity, w.n_heads, w.head_dim), dtype=dtype)
        self.v = np.zeros((capacity, w.n_heads, w.head_dim), dtype=dtype)
        self.length = 0


def attention_step(x_t, w: AttentionBaselineWeights, cache: AttentionCache) -> np.ndarray:
    """Decode one position against the cached keys/values (O(context) work)."""
    x_t = np.asarray(x_t).reshape(-1)
    dh = w.head_dim
    q = (x_t @ w.wq).reshape(w.n_heads, dh)
    if cache.length >= cache.k.shape[0]:
        raise ShapeError("attention cache capacity exhausted")
    cache.k[cache.length] = (x_t @ w.wk).reshape(w.n_heads, dh)
    cache.v[cache.length] = (x_t @ w.wv).reshape(w.n_heads, dh)
    cache.length += 1
    keys = cache.k[: cache.length]
    values = cache.v[: cache.length]
    scores = np.einsum("thd,hd->ht", keys, q) / math.sqrt(dh)
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    out = np.einsum("ht,thd->hd", scores, values)
    return out.reshape(-1) @ w.wo


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRecord:
    """One timed configuration; wall_time is the median over repeats."""

    model_kind: str
    seq_len: int
    dim: int
    repeats: int
    t_min: float
    t_median: float
    t_max: float
    tokens_per_sec: float

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise DomainError(f"unknown model kind {self.model_kind!r}")
        if not (0 < self.t_min <= self.t_median <= self.t_max):
            raise DomainError(
                f"dispersion must satisfy 0 < min <= median <= max, got "
                f"{self.t_min}, {self.t_median}, {self.t_max}"
            )

    @property
    def wall_time(self) -> float:
        return self.t_median


def _forward_fn(model_kind: str, dim: int, seed: int):
    if model_kind == "ssm":
        weights = init_mamba2_weights(
            dim, generator(seed, "bench.ssm"), dtype=np.float32
        )
        return lambda x: mamba2_block(x, weights)
    if model_kind == "attention":
        weights = init_attention_weights(
            dim, generator(seed, "bench.attention"), dtype=np.float32
        )
        return lambda x: attention_forward(x, weights)
    raise DomainError(f"unknown model kind {model_kind!r}; use one of {MODEL_KINDS}")


def measure_forward(model_kind: str, seq_len: int, dim: int, repeats: int = 5,
                    seed: int = 0) -> BenchRecord:
    """Median-of-repeats forward wall time at one (model, length) point.

    Two untimed warm-ups precede the timed runs; the input is drawn from the
    seeded bench stream so both model kinds see the same tokens at equal
    length, and the two warm-up outputs are required to be bit-identical
    (determinism guard). Timing runs under a single BLAS thread.
    """
    if repeats < 3:
        raise DomainError(f"repeats must be >= 3, got {repeats}")
    x = generator(seed, f"bench.input.{seq_len}").standard_normal((seq_len, dim))
    x = x.astype(np.float32)
    forward = _forward_fn(model_kind, dim, seed)
    times = []
    with threadpool_limits(limits=1):
        first = forward(x)
        if not np.array_equal(first, forward(x)):
            raise DomainError(f"{model_kind} forward is not deterministic across repeats")
        for _ in range(repeats):
            t0 = time.perf_counter()
            forward(x)
            times.append(time.perf_counter() - t0)
    t_median = float(np.median(times))
    return BenchRecord(
        model_kind=model_kind,
        seq_len=seq_len,
        dim=dim,
        repeats=repeats,
        t_min=min(times),
        t_median=t_median,
        t_max=max(times),
        tokens_per_sec=eval_avg(seq_len, t_median),
    )


def measure_decode(model_kind: str, context_len: int, dim: int = 64,
                   n_steps: int = 64, seed: int = 0) -> float:
    """Median per-token decode time (seconds) at a given context length.

    The scan path steps a 4-layer toy decoder whose per-layer state is
    constant-size; the attention path decodes against a K/V cache already
    holding ``context_len`` entries. Context build-up is not timed.
    """
    rng = generator(seed, f"bench.decode.{context_len}")
    times = []
    with threadpool_limits(limits=1):
        if model_kind == "ssm":
            lm = MambaLm(ToyLmConfig(d_llm=dim), seed=seed)
            states = lm.init_states()
            for _ in range(context_len):
                lm.step(rng.standard_normal(dim), states)
            probes = rng.standard_normal((n_steps, dim))
            for row in probes:
                t0 = time.perf_counter()
                lm.step(row, states)
                times.append(time.perf_counter() - t0)
        elif model_kind == "attention":
            weights = init_attention_weights(dim, generator(seed, "bench.attention"))
            cache = AttentionCache(weights, context_len + n_steps)
            for _ in range(context_len):
                attention_step(rng.standard_normal(dim), weights, cache)
            probes = rng.standard_normal((n_steps, dim))
            for row in probes:
                t0 = time.perf_counter()
                attention_step(row, weights, cache)
                times.append(time.perf_counter() - t0)
        else:
            raise DomainError(f"unknown model kind {model_kind!r}")
    return float(np.median(times))


def scaling_slope(records: Sequence[BenchRecord]) -> float:
    """Least-squares slope of log(wall time) against log(sequence length)."""
    kinds = {r.model_kind for r in records}
    if len(kinds) > 1:
        raise DomainError(f"records mix model kinds {sorted(kinds)}")
    lengths = sorted({r.seq_len for r in records})
    if len(lengths) < 4:
        raise DomainError(f"need >= 4 distinct lengths, got {len(lengths)}")
    if lengths[-1] < 8 * lengths[0]:
        raise DomainError(
            f"lengths must span >= 8x, got {lengths[0]}..{lengths[-1]}"
        )
    log_l = np.log([r.seq_len for r in records])
    log_t = np.log([r.wall_time for r in records])
    slope, _ = np.polyfit(log_l, log_t, 1)
    return float(slope)


SSM_SLOPE_WINDOW = (0.8, 1.3)
ATTENTION_SLOPE_MIN = 1.7


def slopes_ok(records: Sequence[BenchRecord]) -> bool:
    """True when the scan path fits a ~linear slope and attention a clearly
    super-linear one (the assertion behind ``bench --assert``)."""
    ssm = [r for r in records if r.model_kind == "ssm"]
    attn = [r for r in records if r.model_kind == "attention"]
    lo, hi = SSM_SLOPE_WINDOW
    return lo <= scaling_slope(ssm) <= hi and scaling_slope(attn) >= ATTENTION_SLOPE_MIN


def sweep_lengths(min_len: int, max_len: int) -> List[int]:
    """Doubling sequence of lengths from min_len up to max_len."""
    if min_len < 1 or max_len < min_len:
        raise DomainError(f"bad length range {min_len}..{max_len}")
    lengths = []
    n = min_len
    while n <= max_len:
        lengths.append(n)
        n *= 2
    return lengths


def run_sweep(min_len: int = 256, max_len: int = 8192, dim: int = 64,
              repeats: int = 5, seed: int = 0, progress=None) -> List[BenchRecord]:
    records = []
    for kind in MODEL_KINDS:
        for seq_len in sweep_lengths(min_len, max_len):
            rec = measure_forward(kind, seq_len, dim, repeats, seed)
            records.append(rec)
            if progress is not None:
                progress(rec)
    return records


# ---------------------------------------------------------------------------
# CSV round-trip
# ---------------------------------------------------------------------------


def records_to_csv(records: Sequence[BenchRecord]) -> str:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.model_kind},{r.seq_len},{r.dim},{r.repeats},"
            f"{r.t_min!r},{r.t_median!r},{r.t_max!r},{r.tokens_per_sec!r}"
        )
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> List[BenchRecord]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise DomainError(f"unexpected CSV header {lines[0] if lines else '<empty>'!r}")
    records = []
    for ln in lines[1:]:
        kind, seq_len, dim, repeats, t_min, t_med, t_max, tps = ln.split(",")
        records.append(
            BenchRecord(kind, int(seq_len), int(dim), int(repeats),
                        float(t_min), float(t_med), float(t_max), float(tps))
        )
    return records
