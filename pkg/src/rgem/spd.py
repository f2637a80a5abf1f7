"""Dense symmetric positive-definite matrices.

Everything downstream (densities, the KL penalty, the cross-validation
score) goes through the Cholesky factor cached on :class:`SpdMatrix`, so
each covariance is factorized exactly once.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

__all__ = [
    "SpdMatrix",
    "make_spd",
    "log_det",
    "solve_quad",
    "solve_trace",
    "kl_penalty",
    "frobenius_dist",
]


class SpdMatrix:
    """Immutable SPD matrix with its lower Cholesky factor.

    Construct through :func:`make_spd`; the input is symmetrized first.
    """

    __slots__ = ("_entries", "_chol")

    def __init__(self, raw):
        a = np.array(raw, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        if not np.all(np.isfinite(a)):
            raise NotPositiveDefinite("matrix has non-finite entries")
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from None
        if not np.all(np.diag(chol) > 0):
            raise NotPositiveDefinite("non-positive Cholesky pivot")
        a.flags.writeable = False
        chol.flags.writeable = False
        self._entries = a
        self._chol = chol

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim})"

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self._entries, dtype=dtype)

    def whiten(self, v):
        """Return ``L^{-1} v`` for a vector or for each row of a matrix."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return solve_triangular(self._chol, v, lower=True)
        return solve_triangular(self._chol, v.T, lower=True).T

    def inverse(self) -> np.ndarray:
        linv = solve_triangular(self._chol, np.eye(self.dim), lower=True)
        return linv.T @ linv


def make_spd(raw) -> SpdMatrix:
    """Symmetrize ``raw`` and factorize it.

    Raises
    ------
    NotPositiveDefinite
        If any Cholesky pivot is non-positive.
    """
    if isinstance(raw, SpdMatrix):
        return raw
    return SpdMatrix(raw)


def log_det(a: SpdMatrix) -> float:
    return float(2.0 * np.sum(np.log(np.diag(a.chol))))


def solve_quad(a: SpdMatrix, v):
    """Quadratic form ``v^T A^{-1} v``.

    ``v`` may be a single m-vector (returns a float) or an (n, m) array of
    row vectors (returns the n forms).
    """
    y = a.whiten(v)
    if y.ndim == 1:
        return float(y @ y)
    return np.einsum("ij,ij->i", y, y)


def solve_trace(a: SpdMatrix, b) -> float:
    """``tr(A^{-1} B)`` via ``tr(L^{-T} L^{-1} B)``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (a.dim, a.dim):
        raise ValueError(f"shape mismatch: {b.shape} vs dim {a.dim}")
    y = solve_triangular(a.chol, b, lower=True)
    z = solve_triangular(a.chol, y.T, lower=True)
    return float(np.trace(z))


def kl_penalty(s: SpdMatrix, t: SpdMatrix) -> float:
    """KL shrinkage penalty ``0.5 (tr(S^-1 T) - log|S^-1 T| - m)``.

    Non-negative, zero iff ``S == T``.
    """
    if s.dim != t.dim:
        raise ValueError("dimension mismatch")
    val = 0.5 * (solve_trace(s, t.entries) - (log_det(t) - log_det(s)) - s.dim)
    # rounding can push an exact zero slightly negative
    return max(val, 0.0)


def frobenius_dist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
