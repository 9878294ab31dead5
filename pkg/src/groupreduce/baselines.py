"""Reference compressors: plain SVD, magnitude pruning, uniform quantization."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .compressor import BlockLowRankModel, BlockPartition
from .errors import InvalidInputError
from .numlin import FactorPair, as_matrix, svd_truncated


def lowrank_baseline(A, k: int) -> FactorPair:
    """Unweighted truncated SVD with the singular values folded into ``U``."""
    res = svd_truncated(A, k)
    return FactorPair(U=res.U * res.S, V=res.V)


@dataclass(frozen=True)
class PrunedMatrix:
    dims: tuple
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    threshold: float

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def param_count(self) -> int:
        # sparse storage keeps an index next to every value
        return 2 * self.nnz

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dims, dtype=np.float64)
        out[self.rows, self.cols] = self.values
        return out


def _pruned_from_mask(A, mask, threshold) -> PrunedMatrix:
    rows, cols = np.nonzero(mask)
    return PrunedMatrix(dims=A.shape, rows=rows, cols=cols, values=A[rows, cols], threshold=float(threshold))


def prune(A, threshold: float) -> PrunedMatrix:
    """Keep nonzero entries with ``|a| >= threshold``."""
    A = as_matrix(A)
    if not threshold >= 0:
        raise InvalidInputError(f"threshold must be nonnegative, got {threshold}")
    return _pruned_from_mask(A, (np.abs(A) >= threshold) & (A != 0), threshold)


def prune_to_budget(A, budget_params: int) -> PrunedMatrix:
    """Keep the ``budget // 2`` largest-magnitude nonzeros.

    Equal magnitudes are kept in row-major order.
    """
    A = as_matrix(A)
    if budget_params < 0:
        raise InvalidInputError(f"budget must be nonnegative, got {budget_params}")
    flat = np.abs(A).ravel()
    keep = min(int(budget_params) // 2, int(np.count_nonzero(flat)))
    order = np.argsort(-flat, kind="stable")[:keep]
    mask = np.zeros(flat.shape, dtype=bool)
    mask[order] = True
    threshold = float(flat[order[-1]]) if keep else float("inf")
    return _pruned_from_mask(A, mask.reshape(A.shape), threshold)


@dataclass(frozen=True)
class QuantizedMatrix:
    shape: tuple
    bits: int
    codes: np.ndarray  # uint32, same shape as the source matrix
    range_min: float
    range_max: float

    @property
    def width(self) -> float:
        return (self.range_max - self.range_min) / 2 ** self.bits

    def param_count(self) -> Fraction:
        # b-bit codes as a fraction of 32-bit floats, plus the two range scalars
        return Fraction(int(np.prod(self.shape)) * self.bits, 32) + 2


def quantize_uniform(M, bits: int) -> QuantizedMatrix:
    """Uniform ``bits``-bit quantization over the matrix's value range.

    The range ``[min, max]`` is cut into ``2**bits`` equal intervals and each
    entry is stored as the index of its interval. A constant matrix gets all
    zero codes and keeps the constant in ``range_min``.
    """
    M = np.asarray(M, dtype=np.float64)
    if not isinstance(bits, (int, np.integer)) or not 1 <= bits <= 16:
        raise InvalidInputError(f"bits must be in [1, 16], got {bits!r}")
    if M.size == 0:
        raise InvalidInputError("cannot quantize an empty matrix")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix contains non-finite entries")
    lo, hi = float(M.min()), float(M.max())
    levels = 2 ** bits
    if hi == lo:
        codes = np.zeros(M.shape, dtype=np.uint32)
    else:
        w = (hi - lo) / levels
        codes = np.clip(np.floor((M - lo) / w), 0, levels - 1).astype(np.uint32)
    return QuantizedMatrix(shape=M.shape, bits=int(bits), codes=codes, range_min=lo, range_max=hi)


def dequantize(Q: QuantizedMatrix) -> np.ndarray:
    """Map every code to the midpoint of its interval."""
    if Q.range_max == Q.range_min:
        return np.full(Q.shape, Q.range_min, dtype=np.float64)
    w = Q.width
    return Q.range_min + (Q.codes.astype(np.float64) + 0.5) * w


@dataclass(frozen=True)
class QuantizedBlockModel:
    partition: BlockPartition
    U: tuple  # QuantizedMatrix per cluster
    V: tuple
    bits: int
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "U", tuple(self.U))
        object.__setattr__(self, "V", tuple(self.V))
        n, d = self.dims
        for p, (m, k, qu, qv) in enumerate(
            zip(self.partition.members, self.partition.ranks, self.U, self.V)
        ):
            if tuple(qu.shape) != (m.size, k) or tuple(qv.shape) != (d, k):
                raise InvalidInputError(f"cluster {p}: quantized factor shapes do not match")
            if qu.bits != self.bits or qv.bits != self.bits:
                raise InvalidInputError(f"cluster {p}: bit width differs from model")

    @property
    def n_clusters(self) -> int:
        return self.partition.n_clusters

    def param_count(self):
        return sum(qu.param_count() + qv.param_count() for qu, qv in zip(self.U, self.V))

    def dequantized(self) -> BlockLowRankModel:
        factors = [FactorPair(U=dequantize(qu), V=dequantize(qv)) for qu, qv in zip(self.U, self.V)]
        return BlockLowRankModel(partition=self.partition, factors=factors, dims=self.dims)


def quantize_model(model: BlockLowRankModel, bits: int) -> QuantizedBlockModel:
    """Quantize every factor matrix of a block model independently."""
    return QuantizedBlockModel(
        partition=model.partition,
        U=[quantize_uniform(f.U, bits) for f in model.factors],
        V=[quantize_uniform(f.V, bits) for f in model.factors],
        bits=int(bits),
        dims=model.dims,
    )
