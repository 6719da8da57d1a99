"""Dense tensor validation helpers and the MSMT binary interchange format.

Tensors are plain numpy arrays (float32 or float64, row-major). Construction
goes through :func:`as_tensor`, which rejects non-finite values; everything
downstream may assume finite inputs. Attention masks are 2D boolean arrays
validated by :func:`as_bool_mask`.

MSMT layout (all integers little-endian):

    magic      4 bytes  b"MSMT"
    version    u16      currently 1
    precision  u8       0 = float32, 1 = float64
    rank       u8
    extents    rank * u64
    payload    prod(extents) scalars, little-endian, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSMT"
FORMAT_VERSION = 1

_PRECISION_BYTE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_PRECISION_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

PRECISIONS = {
    "single": np.float32,
    "double": np.float64,
    "f32": np.float32,
    "f64": np.float64,
}


def resolve_dtype(precision) -> np.dtype:
    """Map a precision name or dtype-like to float32/float64."""
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}") from None
    dt = np.dtype(precision)
    if dt not in _PRECISION_BYTE:
        raise ValueError(f"unsupported dtype {dt}; expected float32 or float64")
    return dt


def as_tensor(data, precision="double") -> np.ndarray:
    """Validated dense tensor: contiguous, row-major, finite.

    Raises ValueError on NaN/Inf or on an unsupported dtype.
    """
    arr = np.ascontiguousarray(data, dtype=resolve_dtype(precision))
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("tensor contains non-finite values")
    return arr


def as_bool_mask(bits, rows=None, cols=None) -> np.ndarray:
    """Validated 2D boolean mask, optionally checked against (rows, cols)."""
    mask = np.ascontiguousarray(bits, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got rank {mask.ndim}")
    if rows is not None and mask.shape != (rows, cols):
        raise ValueError(f"mask shape {mask.shape} != ({rows}, {cols})")
    return mask


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| scaled by the largest magnitude in b (the reference)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    denom = max(float(np.abs(b).max(initial=0.0)), np.finfo(np.float64).tiny)
    return float(np.abs(a - b).max(initial=0.0)) / denom


def write_msmt(path, array: np.ndarray) -> None:
    """Write an array to `path` in the MSMT interchange format."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _PRECISION_BYTE:
        raise ValueError(f"MSMT stores float32/float64 only, got {arr.dtype}")
    header = MAGIC + struct.pack(
        "<HBB", FORMAT_VERSION, _PRECISION_BYTE[arr.dtype], arr.ndim
    )
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def read_msmt(path) -> np.ndarray:
    """Read an MSMT file back into a numpy array.

    Rejects bad magic, unknown versions, truncated payloads and trailing
    bytes; the result passes the :func:`as_tensor` finiteness check.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated MSMT header")
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, prec, rank = struct.unpack("<HBB", raw[4:8])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported MSMT version {version}")
    if prec not in _PRECISION_DTYPE:
        raise ValueError(f"{path}: unknown precision byte {prec}")
    offset = 8 + 8 * rank
    if len(raw) < offset:
        raise ValueError(f"{path}: truncated extents")
    shape = struct.unpack(f"<{rank}Q", raw[8:offset])
    dtype = _PRECISION_DTYPE[prec]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise ValueError(
            f"{path}: payload size {len(raw) - offset} != expected "
            f"{count * dtype.itemsize}"
        )
    arr = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(shape)
    return as_tensor(arr, dtype.newbyteorder("="))
