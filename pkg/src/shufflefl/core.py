"""Dense linear algebra and scalar metrics.

Matrices are plain 2-D ``float64`` numpy arrays; permutations are 1-D integer
index arrays. The helpers here validate shapes and raise the package's own
exception types so that callers never have to catch raw numpy errors.
"""
from __future__ import annotations

import math

import numpy as np

from .exceptions import DegenerateInputError, InvariantError, ShapeError

#: Value returned by :func:`psnr` for identical inputs. It is a Python float
#: returned as a scalar and never stored inside a matrix.
PSNR_INF = math.inf


def as_mat(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvariantError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_mat(a, "a")
    b = as_mat(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_mat(a).T.copy()


def add(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a + b


def scale(a, s: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * float(s)


def add_row(a, row) -> np.ndarray:
    """Add ``row`` to every row of ``a`` (bias broadcast)."""
    a = np.asarray(a, dtype=np.float64)
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    if a.shape[-1] != row.shape[0]:
        raise ShapeError(f"bias of length {row.shape[0]} does not match {a.shape[-1]} columns")
    return a + row


def relu(a) -> np.ndarray:
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def tanh(a) -> np.ndarray:
    return np.tanh(np.asarray(a, dtype=np.float64))


def softmax_rows(a) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction.

    The shift is taken over the whole row and the normaliser is summed in
    sorted order, so permuting the columns of the input permutes the output
    bit for bit.
    """
    a = np.asarray(a, dtype=np.float64)
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sort(e, axis=-1).sum(axis=-1, keepdims=True)


def argmax_rows(a) -> np.ndarray:
    return np.argmax(np.asarray(a), axis=-1)


def frobenius(a) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(a, dtype=np.float64)))))


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape or u.size == 0:
        raise ShapeError(f"vectors must be non-empty and equal length, got {u.size} and {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; :data:`PSNR_INF` when the inputs match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise DegenerateInputError("peak must be positive")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def check_perm(p, n: int | None = None) -> np.ndarray:
    """Validate that ``p`` is a bijection on ``0..len(p)-1`` and return it as int64."""
    p = np.asarray(p)
    if p.ndim != 1 or p.size == 0 or not np.issubdtype(p.dtype, np.integer):
        raise InvariantError("permutation must be a non-empty 1-D integer array")
    if n is not None and p.size != n:
        raise ShapeError(f"permutation of length {p.size}, expected {n}")
    if not np.array_equal(np.sort(p), np.arange(p.size)):
        raise InvariantError("index array is not a bijection")
    return p.astype(np.int64, copy=False)
