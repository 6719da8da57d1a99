"""Kernel dispatch: compiled extension if available, numpy fallback otherwise.

The backend is chosen once at import. `MSM_KERNELS=python` or
`MSM_KERNELS=compiled` overrides the automatic choice; requesting the
compiled backend when the extension is missing is an error. Tests and
benchmarks can switch temporarily with :func:`with_backend`.

All ops are pure functions of immutable inputs and are safe to call
concurrently. Optimized backends may reorder reductions; agreement with the
sequential oracles is tolerance-based, not bitwise.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import _pyops

try:
    from . import _cops
except ImportError:  # extension not built
    _cops = None


def _compiled_matmul(a, b):
    out = np.empty((a.shape[0], b.shape[1]), dtype=a.dtype)
    _cops.matmul(a, b, out)
    return out


def _compiled_masked_softmax_rows(x, mask):
    out = np.empty_like(x)
    _cops.masked_softmax_rows(x, mask.view(np.uint8), out)
    return out


def _compiled_rotate_pairs(x2, ang2):
    out = np.empty_like(x2)
    _cops.rotate_pairs(x2, ang2, out)
    return out


def _compiled_masked_attention(q, k, v, mask, scale):
    probs = np.empty((q.shape[0], k.shape[0]), dtype=q.dtype)
    out = np.empty((q.shape[0], v.shape[1]), dtype=q.dtype)
    _cops.masked_attention(q, k, v, mask.view(np.uint8), scale, probs, out)
    return out, probs


_BACKENDS = {"python": _pyops}
if _cops is not None:
    _BACKENDS["compiled"] = _cops

_requested = os.environ.get("MSM_KERNELS", "auto")
if _requested == "auto":
    _active = "compiled" if _cops is not None else "python"
elif _requested in _BACKENDS:
    _active = _requested
else:
    raise ImportError(
        f"MSM_KERNELS={_requested!r} not available; "
        f"choices: {sorted(_BACKENDS)} or auto"
    )


def backend() -> str:
    """Name of the active backend ('compiled' or 'python')."""
    return _active


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


@contextmanager
def with_backend(name: str):
    """Temporarily switch the active backend (tests and benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available")
    previous = _active
    _active = name
    try:
        yield
    finally:
        _active = previous


def _check_float(name, arr):
    if arr.dtype not in (np.float32, np.float64):
        raise ValueError(f"{name} must be float32 or float64, got {arr.dtype}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a [M,K] and b [K,N]."""
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    _check_float("a", a)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    if _active == "compiled":
        return _compiled_matmul(a, b)
    return _pyops.matmul(a, b)


def masked_softmax_rows(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row softmax over unmasked entries; masked-out entries are exactly 0.

    Computed with max-subtraction. A fully-masked row raises
    FullyMaskedRowError rather than producing NaNs.
    """
    x = np.ascontiguousarray(x)
    _check_float("x", x)
    mask = np.ascontiguousarray(mask, dtype=bool)
    if x.ndim != 2 or mask.shape != x.shape:
        raise ValueError(f"mask shape {mask.shape} != input shape {x.shape}")
    if _active == "compiled":
        return _compiled_masked_softmax_rows(x, mask)
    return _pyops.masked_softmax_rows(x, mask)


def rotate_pairs(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate consecutive channel pairs (x[..., 2p], x[..., 2p+1]) by angles.

    `angles` has half the trailing extent of `x` and broadcasts over the
    leading extents. Each pair is rotated by its angle:
    (e*cos - o*sin, e*sin + o*cos), preserving pair norms.
    """
    x = np.ascontiguousarray(x)
    _check_float("x", x)
    d = x.shape[-1]
    if d % 2:
        raise ValueError(f"trailing extent {d} must be even")
    angles = np.asarray(angles, dtype=np.float64)
    target = x.shape[:-1] + (d // 2,)
    try:
        ang = np.broadcast_to(angles, target)
    except ValueError:
        raise ValueError(
            f"angles shape {angles.shape} does not broadcast to {target}"
        ) from None
    if _active == "compiled":
        x2 = x.reshape(-1, d)
        ang2 = np.ascontiguousarray(ang).reshape(-1, d // 2)
        return _compiled_rotate_pairs(x2, ang2).reshape(x.shape)
    return _pyops.rotate_pairs(x, ang)


def masked_attention(q, k, v, mask, scale: float):
    """Fused scaled dot-product attention with a boolean mask.

    Returns (out, probs): out[i] = sum_j probs[i,j] * v[j] with probs the
    masked row softmax of q @ k.T * scale.
    """
    q = np.ascontiguousarray(q)
    k = np.ascontiguousarray(k)
    v = np.ascontiguousarray(v)
    _check_float("q", q)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("masked_attention expects 2D q, k, v")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"q/k feature mismatch: {q.shape} vs {k.shape}")
    if v.shape[0] != k.shape[0]:
        raise ValueError(f"k/v length mismatch: {k.shape} vs {v.shape}")
    mask = np.ascontiguousarray(mask, dtype=bool)
    if mask.shape != (q.shape[0], k.shape[0]):
        raise ValueError(
            f"mask shape {mask.shape} != ({q.shape[0]}, {k.shape[0]})"
        )
    if _active == "compiled":
        return _compiled_masked_attention(q, k, v, mask, float(scale))
    return _pyops.masked_attention(q, k, v, mask, float(scale))
