"""Multimodal connector: 2D-scanned gated-SSM mixing plus feature projection.

Three variants map a token grid (N_v, D_v) to language-model width
(N_v, D_llm):

    mlp       tokens -> 3-layer MLP
    basic     tokens -> multi-directional scan block -> 3-layer MLP
    advanced  tokens -> multi-directional scan block -> SwiGLU -> 3-layer MLP

The scan block runs one shared gated-SSM block over every unfolding of the
grid (2 for the bidirectional mechanism, 4 for the cross mechanism), puts
each result back into grid order, and averages. Sharing the weights across
directions plus the mean merge makes the bidirectional variant equivariant
to reversing the token sequence.

Analytic backward passes for SwiGLU and the MLP are provided for gradient
verification against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy.special import erf
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConnectorError, ShapeError
from .rng import generator
from .scans import MECHANISMS, apply_scan, inverse_scan, scan_orders
from .ssm import Mamba2BlockWeights, init_mamba2_weights, mamba2_block, silu, zero_mamba2_weights
from .validation import as_tensor, check_ndim
from .vision import PatchGrid

VARIANTS = ("mlp", "basic", "advanced")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_prime(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def silu_prime(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return sig * (1.0 + x * (1.0 - sig))


@dataclass(frozen=True)
class ConnectorVariant:
    """Which connector to run and, for the scanned ones, which mechanism."""

    kind: str
    scan: str = "bsm"

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ShapeError(f"unknown connector kind {self.kind!r}; use one of {VARIANTS}")
        if self.scan not in MECHANISMS:
            raise ShapeError(f"unknown scan mechanism {self.scan!r}; use one of {MECHANISMS}")

    @property
    def uses_scan(self) -> bool:
        return self.kind != "mlp"


@dataclass(frozen=True)
class SwigluWeights:
    w_gate: np.ndarray  # (d, d_ff)
    w_up: np.ndarray    # (d, d_ff)
    w_down: np.ndarray  # (d_ff, d)

    def __post_init__(self):
        d, d_ff = self.w_gate.shape
        if self.w_up.shape != (d, d_ff) or self.w_down.shape != (d_ff, d):
            raise ShapeError(
                f"inconsistent swiglu shapes {self.w_gate.shape}, "
                f"{self.w_up.shape}, {self.w_down.shape}"
            )


@dataclass(frozen=True)
class MlpWeights:
    """Three-layer projector d_in -> d_hidden -> d_hidden -> d_out."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        d_in, d_hidden = self.w1.shape
        ok = (
            self.b1.shape == (d_hidden,)
            and self.w2.shape == (d_hidden, d_hidden)
            and self.b2.shape == (d_hidden,)
            and self.w3.shape[0] == d_hidden
            and self.b3.shape == (self.w3.shape[1],)
        )
        if not ok:
            raise ShapeError("inconsistent MLP projector shapes")


@dataclass(frozen=True)
class ConnectorWeights:
    """Everything one connector variant can need; unused parts may be None
    for the plain-MLP variant."""

    mlp: MlpWeights
    mvss: Optional[Mamba2BlockWeights] = None
    swiglu: Optional[SwigluWeights] = None

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays: Dict[str, np.ndarray] = {}
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            arrays[f"mlp.{name}"] = getattr(self.mlp, name)
        if self.mvss is not None:
            arrays.update(self.mvss.to_arrays("mvss."))
        if self.swiglu is not None:
            for name in ("w_gate", "w_up", "w_down"):
                arrays[f"swiglu.{name}"] = getattr(self.swiglu, name)
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ConnectorWeights":
        mlp = MlpWeights(*(arrays[f"mlp.{n}"] for n in ("w1", "b1", "w2", "b2", "w3", "b3")))
        mvss = None
        if "mvss.dims" in arrays:
            mvss = Mamba2BlockWeights.from_arrays(arrays, "mvss.")
        swiglu_w = None
        if "swiglu.w_gate" in arrays:
            swiglu_w = SwigluWeights(*(arrays[f"swiglu.{n}"] for n in ("w_gate", "w_up", "w_down")))
        return cls(mlp=mlp, mvss=mvss, swiglu=swiglu_w)


def init_connector_weights(
    d_v: int,
    d_llm: int,
    seed: int,
    *,
    d_hidden: Optional[int] = None,
    d_ff: Optional[int] = None,
    n_heads: int = 4,
    state_size: int = 8,
) -> ConnectorWeights:
    """Random weights for all three variants at once.

    Defaults: MLP hidden width = d_llm, SwiGLU expansion d_ff = 2 * d_v.
    """
    d_hidden = d_llm if d_hidden is None else d_hidden
    d_ff = 2 * d_v if d_ff is None else d_ff
    rng = generator(seed, "connector")
    scale = lambda fan_in: 1.0 / np.sqrt(fan_in)
    mlp = MlpWeights(
        w1=rng.standard_normal((d_v, d_hidden)) * scale(d_v),
        b1=np.zeros(d_hidden),
        w2=rng.standard_normal((d_hidden, d_hidden)) * scale(d_hidden),
        b2=np.zeros(d_hidden),
        w3=rng.standard_normal((d_hidden, d_llm)) * scale(d_hidden),
        b3=np.zeros(d_llm),
    )
    mvss = init_mamba2_weights(
        d_v, generator(seed, "connector.scan-block"), n_heads=n_heads, state_size=state_size
    )
    swiglu_w = SwigluWeights(
        w_gate=rng.standard_normal((d_v, d_ff)) * scale(d_v),
        w_up=rng.standard_normal((d_v, d_ff)) * scale(d_v),
        w_down=rng.standard_normal((d_ff, d_v)) * scale(d_ff),
    )
    return ConnectorWeights(mlp=mlp, mvss=mvss, swiglu=swiglu_w)


# ---------------------------------------------------------------------------
# Feed-forward pieces
# ---------------------------------------------------------------------------


def swiglu(x, w: SwigluWeights) -> np.ndarray:
    """Gated feed-forward y = (SiLU(x W_g) * (x W_u)) W_d, token-wise."""
    x = as_tensor(x, None, "swiglu input")
    check_ndim(x, 2, "swiglu input")
    if x.shape[1] != w.w_gate.shape[0]:
        raise ShapeError(f"swiglu input width {x.shape[1]} != {w.w_gate.shape[0]}")
    return (silu(x @ w.w_gate) * (x @ w.w_up)) @ w.w_down


def swiglu_backward(x, w: SwigluWeights, grad_out):
    """Gradients of sum(swiglu(x, w) * grad_out) wrt x and each weight."""
    g = x @ w.w_gate
    u = x @ w.w_up
    s = silu(g)
    h = s * u
    dh = grad_out @ w.w_down.T
    du = dh * s
    dg = dh * u * silu_prime(g)
    return {
        "x": dg @ w.w_gate.T + du @ w.w_up.T,
        "w_gate": x.T @ dg,
        "w_up": x.T @ du,
        "w_down": h.T @ grad_out,
    }


def mlp_project(x, w: MlpWeights) -> np.ndarray:
    """Three-layer GELU projector mapping token features to LM width."""
    x = as_tensor(x, None, "mlp input")
    check_ndim(x, 2, "mlp input")
    if x.shape[1] != w.w1.shape[0]:
        raise ShapeError(f"mlp input width {x.shape[1]} != {w.w1.shape[0]}")
    h1 = gelu(x @ w.w1 + w.b1)
    h2 = gelu(h1 @ w.w2 + w.b2)
    return h2 @ w.w3 + w.b3


def mlp_backward(x, w: MlpWeights, grad_out):
    """Gradients of sum(mlp_project(x, w) * grad_out) wrt x and all params."""
    z1 = x @ w.w1 + w.b1
    h1 = gelu(z1)
    z2 = h1 @ w.w2 + w.b2
    h2 = gelu(z2)
    dh2 = grad_out @ w.w3.T
    dz2 = dh2 * gelu_prime(z2)
    dh1 = dz2 @ w.w2.T
    dz1 = dh1 * gelu_prime(z1)
    return {
        "x": dz1 @ w.w1.T,
        "w1": x.T @ dz1,
        "b1": dz1.sum(axis=0),
        "w2": h1.T @ dz2,
        "b2": dz2.sum(axis=0),
        "w3": h2.T @ grad_out,
        "b3": grad_out.sum(axis=0),
    }


# ---------------------------------------------------------------------------
# Multi-directional scan block and the full connector
# ---------------------------------------------------------------------------


def multi_scan_forward(tokens, rows: int, cols: int, mechanism: str, w: Mamba2BlockWeights):
    """Run the shared block along every scan direction and merge by mean.

    For each direction: unfold the grid into a sequence, apply the block,
    fold back into grid order; the merged output is the elementwise mean over
    directions (kept mean rather than sum so the magnitude does not depend on
    whether 2 or 4 directions are in play).
    """
    tokens = as_tensor(tokens, None, "scan tokens")
    check_ndim(tokens, 2, "scan tokens")
    if tokens.shape[0] != rows * cols:
        raise ShapeError(
            f"{tokens.shape[0]} tokens do not fill a {rows}x{cols} grid"
        )
    orders = scan_orders(mechanism, rows, cols)
    acc = np.zeros_like(tokens)
    for order in orders:
        acc += inverse_scan(mamba2_block(apply_scan(tokens, order), w), order)
    return acc / len(orders)


def connector_forward(tokens, rows: int, cols: int, variant: ConnectorVariant,
                      w: ConnectorWeights) -> np.ndarray:
    """Map grid tokens (N_v, D_v) to LM width (N_v, D_llm) per the variant.

    Token count is never changed. Sub-operation failures are re-raised as
    ConnectorError with the variant attached (original error chained).
    """
    try:
        x = as_tensor(tokens, None, "connector input")
        if variant.uses_scan:
            if w.mvss is None:
                raise ShapeError("scanned variant requires scan-block weights")
            x = multi_scan_forward(x, rows, cols, variant.scan, w.mvss)
        if variant.kind == "advanced":
            if w.swiglu is None:
                raise ShapeError("advanced variant requires swiglu weights")
            x = swiglu(x, w.swiglu)
        return mlp_project(x, w.mlp)
    except ConnectorError:
        raise
    except Exception as exc:
        raise ConnectorError(f"{variant.kind}/{variant.scan}: {exc}") from exc


class ScanConnector(BaseEstimator, TransformerMixin):
    """scikit-learn style transformer around connector_forward.

    Parameters
    ----------
    variant : {"mlp", "basic", "advanced"}
    scan : {"bsm", "csm"}
        Ignored by the plain-MLP variant.
    out_dim : int
        Output (language-model) feature width.
    seed : int
        Root seed for the randomly initialized weights.
    grid_rows, grid_cols : int or None
        Grid geometry used when transform() receives a bare array instead of
        a PatchGrid; left unset, a bare (N, D) array is treated as an N x 1
        grid (plain sequence order).
    n_heads, state_size : int
        Scan-block head count and per-head state size.

    Attributes
    ----------
    weights_ : ConnectorWeights
        Initialized on fit() from the input feature width and the seed.
    in_dim_ : int
        Feature width seen at fit time.
    """

    def __init__(self, variant: str = "advanced", scan: str = "bsm", out_dim: int = 64,
                 seed: int = 0, grid_rows: Optional[int] = None,
                 grid_cols: Optional[int] = None, n_heads: int = 4, state_size: int = 8):
        self.variant = variant
        self.scan = scan
        self.out_dim = out_dim
        self.seed = seed
        self.grid_rows = grid_rows
        self.grid_cols = grid_cols
        self.n_heads = n_heads
        self.state_size = state_size

    def _tokens_and_grid(self, X):
        if isinstance(X, PatchGrid):
            return X.tokens, X.rows, X.cols
        tokens = as_tensor(X, None, "connector input")
        check_ndim(tokens, 2, "connector input")
        rows, cols = self.grid_rows, self.grid_cols
        if rows is None or cols is None:
            rows, cols = tokens.shape[0], 1
        return tokens, rows, cols

    def fit(self, X, y=None):
        tokens, _, _ = self._tokens_and_grid(X)
        self.in_dim_ = tokens.shape[1]
        self.weights_ = init_connector_weights(
            self.in_dim_, self.out_dim, self.seed,
            n_heads=self.n_heads, state_size=self.state_size,
        )
        return self

    def transform(self, X):
        if not hasattr(self, "weights_"):
            raise NotFittedError("ScanConnector.fit must run before transform")
        tokens, rows, cols = self._tokens_and_grid(X)
        if tokens.shape[1] != self.in_dim_:
            raise ShapeError(
                f"feature width {tokens.shape[1]} differs from fitted width {self.in_dim_}"
            )
        out = connector_forward(
            tokens, rows, cols, ConnectorVariant(self.variant, self.scan), self.weights_
        )
        if isinstance(X, PatchGrid):
            return PatchGrid(rows, cols, X.patch_size, out)
        return out
