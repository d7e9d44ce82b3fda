"""Minimal dense float32 numerics for the toy decoder.

Everything here is a pure function over numpy arrays with 32-bit float
semantics: inputs and results are float32. Matrix products accumulate in
float64 before rounding back, so batched and sequential evaluation orders
agree elementwise far below the 1e-6 contract even at deep-layer hidden
magnitudes. Causal masking is expressed as an allowed-prefix length per
query rather than a dense mask matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError, MaskError

DTYPE = np.float32
RMS_EPS = 1e-6


def as_f32(x, name: str = "array") -> np.ndarray:
    """Convert to a float32 ndarray and reject non-finite values."""
    a = np.asarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite values")
    return a


def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of float32 operands, accumulated in float64, rounded to float32.

    Order-insensitive accumulation is what makes batched and one-at-a-time
    forward passes elementwise equal; callers must pass shape-checked arrays.
    """
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def matmul(a, b) -> np.ndarray:
    """Matrix product of two 2-D arrays, shape (a.rows, b.cols)."""
    a = as_f32(a, "a")
    b = as_f32(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return mm(a, b)


def softmax_row(logits) -> np.ndarray:
    """Softmax of a single logit vector, with max-subtraction for stability."""
    v = as_f32(logits, "logits")
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("softmax_row expects a non-empty 1-D vector")
    shifted = v - v.max()
    e = np.exp(shifted)
    return (e / e.sum(dtype=np.float64)).astype(DTYPE)


def rms_norm(h, gain) -> np.ndarray:
    """Scale ``h`` by 1/sqrt(mean(h^2) + eps), then by an elementwise gain.

    Accepts a single vector or a batch of row vectors; the mean square is
    taken per row.
    """
    h = as_f32(h, "h")
    g = as_f32(gain, "gain")
    if g.ndim != 1 or h.shape[-1] != g.shape[0]:
        raise DimensionError(f"rms_norm length mismatch: h {h.shape}, gain {g.shape}")
    mean_sq = np.mean(np.square(h, dtype=np.float64), axis=-1, keepdims=True)
    scale = (1.0 / np.sqrt(mean_sq + RMS_EPS)).astype(DTYPE)
    return (h * scale * g).astype(DTYPE)


def attention(queries, keys, values, mask) -> np.ndarray:
    """Scaled-dot-product attention with a per-query allowed-prefix mask.

    ``mask[q]`` is the number of leading key rows query ``q`` may attend to;
    disallowed keys receive probability exactly 0. Scores are scaled by
    1/sqrt(head_dim) where head_dim is the query width.
    """
    q = as_f32(queries, "queries")
    k = as_f32(keys, "keys")
    v = as_f32(values, "values")
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("attention expects 2-D queries/keys/values")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    m = np.asarray(mask, dtype=np.int64)
    if m.ndim != 1 or m.shape[0] != q.shape[0]:
        raise DimensionError("mask must hold one prefix length per query")
    if np.any(m > k.shape[0]):
        raise MaskError(f"mask exceeds key count {k.shape[0]}")
    if np.any(m < 1):
        raise MaskError("each query must be allowed at least one key")

    scale = DTYPE(1.0 / np.sqrt(q.shape[1]))
    scores = mm(q, k.T) * scale
    cols = np.arange(k.shape[0])
    scores = np.where(cols[None, :] < m[:, None], scores, DTYPE(-np.inf))
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    # float64 row sums: pairwise-summation trees differ between a short
    # prefix row and a zero-padded full row, and float32 sums would leak
    # that difference into the probabilities.
    probs = (e / e.sum(axis=1, keepdims=True, dtype=np.float64)).astype(DTYPE)
    return mm(probs, v)
