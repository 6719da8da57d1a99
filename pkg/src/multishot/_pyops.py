"""Numpy implementations of the kernel ops.

This is the fallback backend used when the compiled extension is not
available. All functions receive pre-validated arguments from
:mod:`multishot.kernels`; shapes and dtypes are not re-checked here.
"""

from __future__ import annotations

import numpy as np

from .errors import FullyMaskedRowError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def masked_softmax_rows(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not mask.any(axis=1).all():
        row = int(np.flatnonzero(~mask.any(axis=1))[0])
        raise FullyMaskedRowError(f"softmax row {row} is fully masked")
    neg = np.where(mask, x, -np.inf)
    shifted = neg - neg.max(axis=1, keepdims=True)
    expd = np.where(mask, np.exp(shifted, where=mask, out=np.zeros_like(x)), 0.0)
    return expd / expd.sum(axis=1, keepdims=True)


def rotate_pairs(x: np.ndarray, angles: np.ndarray) -> np.ndarray:
    # x[..., 2p] + i*x[..., 2p+1] multiplied by exp(i*theta_p)
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def masked_attention(q, k, v, mask, scale):
    scores = (q @ k.T) * q.dtype.type(scale)
    probs = masked_softmax_rows(scores, mask)
    return probs @ v, probs
