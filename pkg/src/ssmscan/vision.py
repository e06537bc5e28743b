"""Image ingestion, patch tokenization, stub encoders, and feature fusion.

Images arrive as binary PGM (P5) or PPM (P6) with maxval 255 and are held as
(H, W, C) float arrays in [0, 1]. ``patchify`` splits an image into
rows*cols = H*W/P^2 non-overlapping PxP patches, each flattened row-major
with channels innermost, giving a token grid. Two deterministic stub
encoders (a seeded random affine map followed by tanh) stand in for real
pretrained vision backbones, and ``fuse_encoders`` concatenates two encoders'
features token by token.

Estimator-style wrappers (Patchifier, StubEncoder) follow the scikit-learn
fit/transform protocol so the tokenization stages compose in a Pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import BinaryIO

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    BadMagicError,
    DimensionOverflowError,
    DomainError,
    FusionError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .rng import SplitMix64
from .validation import as_tensor, check_positive

_MAX_PIXELS = 1 << 26


@dataclass(frozen=True)
class Image:
    """Decoded raster: (H, W, C) float64 pixels scaled to [0, 1], C in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", as_tensor(self.pixels, np.float64, "pixels"))
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise ShapeError(f"pixels must be (H, W, 1|3), got {self.pixels.shape}")
        if np.any(self.pixels < 0) or np.any(self.pixels > 1):
            raise DomainError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class PatchGrid:
    """A (rows * cols, features) token matrix plus its grid geometry."""

    rows: int
    cols: int
    patch_size: int
    tokens: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tokens", as_tensor(self.tokens, None, "tokens"))
        if self.tokens.ndim != 2 or self.tokens.shape[0] != self.rows * self.cols:
            raise ShapeError(
                f"tokens have shape {self.tokens.shape}, expected "
                f"({self.rows * self.cols}, features) for a {self.rows}x{self.cols} grid"
            )

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.tokens.shape[1]


# ---------------------------------------------------------------------------
# PNM loading
# ---------------------------------------------------------------------------


def _read_header_token(source: BinaryIO) -> bytes:
    """Next whitespace-delimited header token, skipping '#' comments."""
    token = b""
    while True:
        ch = source.read(1)
        if not ch:
            if token:
                return token
            raise TruncatedPayloadError("stream ended inside the PNM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = source.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def load_pnm(source: BinaryIO) -> Image:
    """Decode binary PGM (P5, grayscale) or PPM (P6, RGB) with maxval 255."""
    magic = source.read(2)
    if len(magic) < 2:
        raise TruncatedPayloadError("stream ended inside the magic bytes")
    if magic not in (b"P5", b"P6"):
        raise BadMagicError(f"bad PNM magic {magic!r}, expected b'P5' or b'P6'")
    channels = 1 if magic == b"P5" else 3
    try:
        width = int(_read_header_token(source))
        height = int(_read_header_token(source))
        maxval = int(_read_header_token(source))
    except ValueError as exc:
        raise BadMagicError(f"non-numeric PNM header field: {exc}") from exc
    if width < 1 or height < 1:
        raise DimensionOverflowError(f"invalid dimensions {width}x{height}")
    if width * height > _MAX_PIXELS:
        raise DimensionOverflowError(f"dimensions {width}x{height} overflow the reader")
    if maxval != 255:
        raise UnsupportedVersionError(f"only maxval 255 is supported, got {maxval}")
    n_bytes = width * height * channels
    payload = source.read(n_bytes)
    if len(payload) < n_bytes:
        raise TruncatedPayloadError(
            f"payload truncated: wanted {n_bytes} bytes, got {len(payload)}"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image(raw.astype(np.float64) / 255.0)


def load_pnm_file(path) -> Image:
    with open(path, "rb") as fh:
        return load_pnm(fh)


def promote_rgb(img: Image) -> Image:
    """Replicate a grayscale channel to 3 channels for RGB-only consumers."""
    if img.channels == 3:
        return img
    return Image(np.repeat(img.pixels, 3, axis=2))


# ---------------------------------------------------------------------------
# Patch tokenization
# ---------------------------------------------------------------------------


def patchify(img: Image, patch_size: int) -> PatchGrid:
    """Split the image into non-overlapping PxP patch tokens.

    Patch (r, c) covers pixel rows [rP, (r+1)P) and columns [cP, (c+1)P);
    its feature vector is that block flattened row-major, channels innermost
    (feature dim P*P*C). Token order is row-major over the patch lattice.
    """
    check_positive(patch_size, "patch size")
    h, w, c = img.pixels.shape
    if h % patch_size or w % patch_size:
        raise DomainError(
            f"patch size {patch_size} does not divide image {h}x{w}"
        )
    rows, cols = h // patch_size, w // patch_size
    blocks = img.pixels.reshape(rows, patch_size, cols, patch_size, c)
    tokens = blocks.transpose(0, 2, 1, 3, 4).reshape(rows * cols, patch_size * patch_size * c)
    return PatchGrid(rows, cols, patch_size, tokens)


def unpatchify(grid: PatchGrid, channels: int) -> Image:
    """Reassemble raw pixel patches into the original image (bit-exact)."""
    p = grid.patch_size
    if grid.feature_dim != p * p * channels:
        raise ShapeError(
            f"feature dim {grid.feature_dim} is not a {p}x{p}x{channels} pixel patch"
        )
    blocks = grid.tokens.reshape(grid.rows, grid.cols, p, p, channels)
    pixels = blocks.transpose(0, 2, 1, 3, 4).reshape(grid.rows * p, grid.cols * p, channels)
    return Image(pixels)


# ---------------------------------------------------------------------------
# Stub encoders and fusion
# ---------------------------------------------------------------------------


def stub_encoder_params(seed: int, in_dim: int, out_dim: int):
    """Deterministic affine parameters for a stub encoder.

    Drawn from the documented SplitMix64 stream seeded with ``seed``: first
    the (out_dim, in_dim) matrix row-major with entries uniform in
    (-1/sqrt(in_dim), +1/sqrt(in_dim)), then the out_dim bias entries uniform
    in (-0.5, 0.5). Same seed and dims give bit-identical parameters on every
    platform.
    """
    gen = SplitMix64(seed)
    scale = 1.0 / np.sqrt(in_dim)
    m = gen.uniform_array((out_dim, in_dim), -scale, scale)
    b = gen.uniform_array((out_dim,), -0.5, 0.5)
    return m, b


def stub_encode(grid: PatchGrid, seed: int, out_dim: int) -> PatchGrid:
    """Deterministic stand-in for a pretrained vision encoder.

    tokens' = tanh(tokens M^T + b) with (M, b) from stub_encoder_params.
    Token count and grid geometry are preserved; only the feature dimension
    changes.
    """
    check_positive(out_dim, "encoder output dim")
    m, b = stub_encoder_params(seed, grid.feature_dim, out_dim)
    encoded = np.tanh(grid.tokens @ m.T + b)
    return PatchGrid(grid.rows, grid.cols, grid.patch_size, encoded)


def fuse_encoders(f_a: PatchGrid, f_b: PatchGrid) -> PatchGrid:
    """Concatenate two encoders' features token by token.

    Both grids must share (rows, cols); the fused feature dim is the sum of
    the inputs' and token order is preserved, so slicing the output recovers
    each input exactly.
    """
    if (f_a.rows, f_a.cols) != (f_b.rows, f_b.cols):
        raise FusionError(
            f"cannot fuse grids {f_a.rows}x{f_a.cols} and {f_b.rows}x{f_b.cols}"
        )
    tokens = np.concatenate([f_a.tokens, f_b.tokens], axis=1)
    return PatchGrid(f_a.rows, f_a.cols, f_a.patch_size, tokens)


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------


class Patchifier(BaseEstimator, TransformerMixin):
    """Stateless transformer: Image (or (H, W, C) array) -> PatchGrid."""

    def __init__(self, patch_size: int = 8):
        self.patch_size = patch_size

    def fit(self, X=None, y=None):
        check_positive(self.patch_size, "patch_size")
        return self

    def transform(self, X) -> PatchGrid:
        img = X if isinstance(X, Image) else Image(np.asarray(X))
        return patchify(img, self.patch_size)


class StubEncoder(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping stub_encode; accepts PatchGrid or a
    2-D token array (returned in kind)."""

    def __init__(self, out_dim: int = 24, seed: int = 0):
        self.out_dim = out_dim
        self.seed = seed

    def fit(self, X=None, y=None):
        check_positive(self.out_dim, "out_dim")
        return self

    def transform(self, X):
        if isinstance(X, PatchGrid):
            return stub_encode(X, self.seed, self.out_dim)
        tokens = as_tensor(X, None, "tokens")
        grid = PatchGrid(tokens.shape[0], 1, 1, tokens)
        return stub_encode(grid, self.seed, self.out_dim).tokens
