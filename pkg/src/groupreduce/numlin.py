"""Dense SVD and projection primitives.

Everything here works on float64 numpy arrays and never mutates its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray  # n x k
    S: np.ndarray  # k, non-increasing
    V: np.ndarray  # D x k

    @property
    def k(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


@dataclass(frozen=True)
class FactorPair:
    """Rank-k factors with ``A ~= U @ V.T``; V has orthonormal columns."""

    U: np.ndarray  # n x k
    V: np.ndarray  # D x k

    @property
    def k(self) -> int:
        return self.V.shape[1]

    def product(self) -> np.ndarray:
        return self.U @ self.V.T


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Validate ``A`` as a finite 2-D matrix with at least one row and column."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise InvalidInputError(f"{name} must be non-empty, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return A


def _fix_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-|.| entry of each V column made positive; argmax picks the lowest index on ties
    if V.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def svd_full(A) -> SvdResult:
    """Thin SVD of ``A`` (all ``min(N, D)`` triplets) with deterministic signs."""
    A = as_matrix(A)
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    U, V = _fix_signs(U, Vt.T)
    return SvdResult(U=U, S=S, V=V)


def svd_truncated(A, k: int) -> SvdResult:
    """Top-``k`` singular triplets of ``A``.

    ``U @ diag(S) @ V.T`` is the Frobenius-optimal rank-``k`` approximation.
    Signs are normalised so the largest-magnitude entry of every column of
    ``V`` is positive, which makes results (and model files) reproducible.
    """
    A = as_matrix(A)
    kmax = min(A.shape)
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= kmax:
        raise InvalidInputError(f"rank must be an integer in [1, {kmax}], got {k!r}")
    full = svd_full(A)
    return SvdResult(U=full.U[:, :k].copy(), S=full.S[:k].copy(), V=full.V[:, :k].copy())


def singular_values(A) -> np.ndarray:
    return np.linalg.svd(as_matrix(A), compute_uv=False)


def frobenius_error(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise InvalidInputError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.linalg.norm(A - B))


def project_residual(a, V) -> float:
    """Return ``||a - V V^T a||_2`` for a basis ``V`` with orthonormal columns."""
    a = np.asarray(a, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if a.ndim != 1 or V.ndim != 2 or V.shape[0] != a.shape[0]:
        raise InvalidInputError(
            f"dimension mismatch: vector {a.shape} vs basis {V.shape}"
        )
    return float(np.linalg.norm(a - V @ (V.T @ a)))


def project_residuals(A, V) -> np.ndarray:
    """Row-wise :func:`project_residual` for every row of ``A``."""
    A = np.asarray(A, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if A.ndim != 2 or V.ndim != 2 or V.shape[0] != A.shape[1]:
        raise InvalidInputError(
            f"dimension mismatch: rows {A.shape} vs basis {V.shape}"
        )
    return np.linalg.norm(A - (A @ V) @ V.T, axis=1)
