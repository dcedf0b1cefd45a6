"""Small dense linear algebra for Gaussian scoring.

Cholesky factors are kept as packed lower-triangular vectors so that a
network output layer maps one-to-one onto the free entries of the factor.
Entry (r, c) with c <= r lives at ``r * (r + 1) // 2 + c``.

Nothing here ever inverts a matrix; quadratic forms go through forward
substitution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-12


class LinAlgError(ValueError):
    pass


class NotPositiveDefinite(LinAlgError):
    pass


class DimensionMismatch(LinAlgError):
    pass


def packed_size(d: int) -> int:
    return d * (d + 1) // 2


def packed_index(r: int, c: int) -> int:
    if c > r:
        raise IndexError("upper-triangular entry requested")
    return r * (r + 1) // 2 + c


def diag_indices(d: int) -> np.ndarray:
    """Positions of the diagonal entries inside a packed vector."""
    return np.array([packed_index(k, k) for k in range(d)], dtype=np.int64)


def dim_from_packed(n: int) -> int:
    d = int(round((math.sqrt(8 * n + 1) - 1) / 2))
    if packed_size(d) != n:
        raise DimensionMismatch(f"{n} is not a triangular number")
    return d


def pack(dense: np.ndarray) -> np.ndarray:
    """Packed lower half of ``dense`` (..., d, d) -> (..., d(d+1)/2)."""
    dense = np.asarray(dense, dtype=float)
    d = dense.shape[-1]
    rows, cols = np.tril_indices(d)
    return dense[..., rows, cols]


def unpack(packed: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack`; upper triangle is zero."""
    packed = np.asarray(packed, dtype=float)
    d = dim_from_packed(packed.shape[-1])
    out = np.zeros(packed.shape[:-1] + (d, d))
    rows, cols = np.tril_indices(d)
    out[..., rows, cols] = packed
    return out


@dataclass(frozen=True)
class LowerTriangular:
    """Lower-triangular matrix in row-major packed storage."""

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (packed_size(self.dim),):
            raise DimensionMismatch(
                f"expected {packed_size(self.dim)} packed entries, got {entries.shape}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_dense(cls, dense) -> "LowerTriangular":
        dense = np.asarray(dense, dtype=float)
        return cls(dense.shape[0], pack(dense))

    @classmethod
    def identity(cls, d: int) -> "LowerTriangular":
        return cls.from_dense(np.eye(d))

    def dense(self) -> np.ndarray:
        return unpack(self.entries)

    def diagonal(self) -> np.ndarray:
        return self.entries[diag_indices(self.dim)]

    def is_cholesky_factor(self) -> bool:
        return bool(np.all(self.diagonal() > 0))


@dataclass(frozen=True)
class SymmetricPD:
    """Symmetric matrix stored by its lower half; PD-ness is checked lazily by
    :func:`cholesky`."""

    dim: int
    lower: np.ndarray

    @classmethod
    def from_dense(cls, dense) -> "SymmetricPD":
        dense = np.asarray(dense, dtype=float)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise DimensionMismatch("matrix must be square")
        return cls(dense.shape[0], pack(dense))

    def dense(self) -> np.ndarray:
        low = unpack(self.lower)
        return low + np.tril(low, -1).T


def _as_lower(L) -> LowerTriangular:
    if isinstance(L, LowerTriangular):
        return L
    return LowerTriangular.from_dense(L)


def cholesky(S) -> LowerTriangular:
    """Cholesky-Banachiewicz factorization ``S = L L^T``.

    Raises NotPositiveDefinite when a pivot drops to ``PIVOT_TOL`` or below.
    """
    if not isinstance(S, SymmetricPD):
        S = SymmetricPD.from_dense(S)
    d = S.dim
    if d < 1:
        raise DimensionMismatch("empty matrix")
    A = S.dense()
    L = np.zeros((d, d))
    for r in range(d):
        for c in range(r + 1):
            acc = A[r, c] - float(np.dot(L[r, :c], L[c, :c]))
            if r == c:
                if acc <= PIVOT_TOL:
                    raise NotPositiveDefinite(f"pivot {r} is {acc:.3g}")
                L[r, r] = math.sqrt(acc)
            else:
                L[r, c] = acc / L[c, c]
    return LowerTriangular.from_dense(L)


def forward_substitute(L, v) -> np.ndarray:
    """Solve ``L y = v`` for lower-triangular ``L``."""
    L = _as_lower(L)
    v = np.asarray(v, dtype=float)
    if v.shape != (L.dim,):
        raise DimensionMismatch(f"vector of shape {v.shape} vs dim {L.dim}")
    M = L.dense()
    y = np.zeros(L.dim)
    for k in range(L.dim):
        y[k] = (v[k] - float(np.dot(M[k, :k], y[:k]))) / M[k, k]
    return y


def mahalanobis_sq(a, mu, L) -> float:
    """Squared Mahalanobis distance ``(a-mu)^T (L L^T)^{-1} (a-mu)``."""
    a = np.asarray(a, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if a.shape != mu.shape:
        raise DimensionMismatch(f"{a.shape} vs {mu.shape}")
    y = forward_substitute(L, a - mu)
    return float(y @ y)


# Batched variants used on the hot paths. Dense factors of shape (..., d, d).

def forward_substitute_batch(L: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = L.shape[-1]
    if v.shape[-1] != d:
        raise DimensionMismatch(f"vector dim {v.shape[-1]} vs factor dim {d}")
    y = np.empty(np.broadcast_shapes(L.shape[:-2], v.shape[:-1]) + (d,))
    for k in range(d):
        acc = v[..., k] - np.einsum("...j,...j->...", L[..., k, :k], y[..., :k])
        y[..., k] = acc / L[..., k, k]
    return y


def back_substitute_transpose_batch(L: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Solve ``L^T s = y`` for lower-triangular ``L``."""
    d = L.shape[-1]
    s = np.empty_like(y)
    for k in range(d - 1, -1, -1):
        acc = y[..., k] - np.einsum("...j,...j->...", L[..., k + 1:, k], s[..., k + 1:])
        s[..., k] = acc / L[..., k, k]
    return s


def mahalanobis_sq_batch(a: np.ndarray, mu: np.ndarray, L: np.ndarray) -> np.ndarray:
    y = forward_substitute_batch(L, a - mu)
    return np.einsum("...k,...k->...", y, y)
