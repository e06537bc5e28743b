"""Bit-exact binary tensor serialization and named-weight bundles.

File layout (all integers little-endian):

    offset  size        field
    0       4           magic ``MLMT``
    4       1           version, currently 1
    5       1           dtype code: 0 = f32, 1 = f64
    6       1           rank r (0..255; rank 0 is a scalar)
    7       4*r         dims, one u32 per axis
    7+4r    w*prod(dims) payload, row-major, w = element width

A rank-0 file has an empty dims list and exactly one payload element.
Round-tripping write -> read reproduces shape, dtype, and every payload byte.

A *bundle* is a directory holding one ``.mlmt`` file per named array plus a
``manifest.txt`` of ``name = filename`` lines ('#' starts a comment). Bundles
are how block/connector/LM weights are stored.
"""

from __future__ import annotations

import io
import os
import re
from typing import BinaryIO, Dict

import numpy as np

from .errors import (
    BadMagicError,
    DimensionOverflowError,
    FormatError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .tensor import CODE_DTYPES, DTYPE_CODES
from .validation import as_tensor

MAGIC = b"MLMT"
VERSION = 1

# Refuse to allocate absurd payloads from a 4-byte dim field.
_MAX_ELEMENTS = 1 << 32


def write_tensor(arr: np.ndarray, sink: BinaryIO) -> int:
    """Write ``arr`` to a binary stream; returns the number of bytes written."""
    arr = as_tensor(arr, name="tensor")
    if arr.ndim > 255:
        raise ShapeError(f"rank {arr.ndim} exceeds the format's u8 rank field")
    if any(d >= (1 << 32) for d in arr.shape):
        raise ShapeError(f"dimension in {arr.shape} exceeds u32")
    header = bytearray()
    header += MAGIC
    header.append(VERSION)
    header.append(DTYPE_CODES[arr.dtype])
    header.append(arr.ndim)
    for d in arr.shape:
        header += int(d).to_bytes(4, "little")
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    sink.write(bytes(header))
    sink.write(payload)
    return len(header) + len(payload)


def read_tensor(source: BinaryIO) -> np.ndarray:
    """Read one tensor from a binary stream (bit-exact inverse of write_tensor)."""
    magic = source.read(4)
    if len(magic) < 4:
        raise TruncatedPayloadError("stream ended inside the magic bytes")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    head = source.read(3)
    if len(head) < 3:
        raise TruncatedPayloadError("stream ended inside the header")
    version, dtype_code, rank = head
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if dtype_code not in CODE_DTYPES:
        raise UnsupportedVersionError(f"unknown dtype code {dtype_code}")
    dims_raw = source.read(4 * rank)
    if len(dims_raw) < 4 * rank:
        raise TruncatedPayloadError("stream ended inside the dims list")
    dims = tuple(
        int.from_bytes(dims_raw[4 * i : 4 * i + 4], "little") for i in range(rank)
    )
    n_elements = 1
    for d in dims:
        n_elements *= d
    if n_elements > _MAX_ELEMENTS:
        raise DimensionOverflowError(f"declared dims {dims} overflow the reader")
    dtype = CODE_DTYPES[dtype_code]
    n_bytes = n_elements * dtype.itemsize
    payload = source.read(n_bytes)
    if len(payload) < n_bytes:
        raise TruncatedPayloadError(
            f"payload truncated: wanted {n_bytes} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
    arr = arr.reshape(dims)
    return as_tensor(arr, name="tensor payload")


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(arr, buf)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def save_tensor(path, arr: np.ndarray) -> int:
    with open(path, "wb") as fh:
        return write_tensor(arr, fh)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def save_bundle(directory, arrays: Dict[str, np.ndarray]) -> None:
    """Write one .mlmt file per named array plus a manifest."""
    os.makedirs(directory, exist_ok=True)
    lines = ["# tensor bundle manifest: name = filename"]
    for name, arr in arrays.items():
        if not _NAME_RE.match(name):
            raise FormatError(f"bundle entry name {name!r} is not filesystem-safe")
        filename = f"{name}.mlmt"
        save_tensor(os.path.join(directory, filename), arr)
        lines.append(f"{name} = {filename}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_bundle(directory) -> Dict[str, np.ndarray]:
    manifest = os.path.join(directory, "manifest.txt")
    arrays: Dict[str, np.ndarray] = {}
    with open(manifest) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{manifest}:{lineno}: expected 'name = filename'")
            name, filename = (part.strip() for part in line.split("=", 1))
            arrays[name] = load_tensor(os.path.join(directory, filename))
    return arrays
