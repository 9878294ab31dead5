"""Objectives, memory accounting, diagnostic curves and the ablation harness."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .baselines import PrunedMatrix, QuantizedBlockModel, lowrank_baseline
from .compressor import (
    BlockLowRankModel,
    BlockPartition,
    RefineConfig,
    assign_ranks,
    block_objective,
    cluster_mean_frequencies,
    fill_ranks,
    fit_blocks,
    frequency_table,
    init_partition_by_frequency,
    rank_budget_solve,
    reconstruct_full,
    refine,
    weighted_lowrank,
)
from .errors import InvalidInputError
from .numlin import FactorPair, as_matrix, frobenius_error, singular_values, svd_truncated

MIB = 1024 * 1024


@dataclass(frozen=True)
class MemoryReport:
    parameter_count: Fraction  # equivalent 32-bit parameters
    dense_count: int

    @property
    def bytes_at_32bit(self) -> Fraction:
        return 4 * self.parameter_count

    @property
    def mebibytes(self) -> float:
        return float(self.bytes_at_32bit) / MIB

    @property
    def compression_rate(self) -> float:
        if self.parameter_count == 0:
            return float("inf")
        return float(Fraction(self.dense_count) / self.parameter_count)

    def lines(self) -> list[str]:
        return [
            f"parameter_count: {_fmt(self.parameter_count)}",
            f"bytes_at_32bit: {_fmt(self.bytes_at_32bit)}",
            f"dense_parameter_count: {self.dense_count}",
            f"compression_rate: {self.compression_rate!r}",
        ]


def _fmt(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else repr(float(x))


def memory_footprint(obj, dims: Optional[tuple] = None) -> MemoryReport:
    """Parameter accounting for any representation of an ``N x D`` matrix.

    ``obj`` may be a block model (plain or quantized), a pruned matrix, a
    single :class:`FactorPair`, or an ``(N, D)`` tuple for the dense original.
    """
    if isinstance(obj, BlockLowRankModel):
        n, d = obj.dims
        count = Fraction(obj.param_count())
    elif isinstance(obj, QuantizedBlockModel):
        n, d = obj.dims
        count = Fraction(obj.param_count())
    elif isinstance(obj, PrunedMatrix):
        n, d = obj.dims
        count = Fraction(obj.param_count())
    elif isinstance(obj, FactorPair):
        n, d = obj.U.shape[0], obj.V.shape[0]
        count = Fraction((n + d) * obj.k)
    elif isinstance(obj, tuple) and len(obj) == 2:
        n, d = int(obj[0]), int(obj[1])
        count = Fraction(n * d)
    else:
        raise InvalidInputError(f"cannot account memory for {type(obj).__name__}")
    if dims is not None:
        n, d = dims
    return MemoryReport(parameter_count=count, dense_count=int(n) * int(d))


def as_block_model(obj) -> BlockLowRankModel:
    if isinstance(obj, BlockLowRankModel):
        return obj
    if isinstance(obj, QuantizedBlockModel):
        return obj.dequantized()
    if isinstance(obj, FactorPair):
        n = obj.U.shape[0]
        part = BlockPartition(members=(np.arange(n),), n_rows=n, ranks=(obj.k,))
        return BlockLowRankModel(partition=part, factors=(obj,), dims=(n, obj.V.shape[0]))
    raise InvalidInputError(f"not a low-rank model: {type(obj).__name__}")


def weighted_objective(A, q, model) -> float:
    """``sum_p ||Q_p A_p - Q_p U_p V_p^T||_F^2`` with ``Q = diag(sqrt(q))``."""
    return block_objective(A, q, as_block_model(model))


def unweighted_error(A, model) -> float:
    return frobenius_error(A, reconstruct_full(as_block_model(model)))


def spectrum(A) -> np.ndarray:
    return singular_values(A)


def error_curve(A, ks: Sequence[int]) -> list[tuple[int, float]]:
    """Relative Frobenius error of the rank-``k`` SVD for every ``k`` in ``ks``.

    ``k = 0`` means the zero approximation (relative error 1).
    """
    A = as_matrix(A)
    norm = float(np.linalg.norm(A))
    out = []
    for k in ks:
        if k == 0:
            out.append((0, 1.0))
            continue
        res = svd_truncated(A, int(k))
        err = frobenius_error(A, res.reconstruct())
        out.append((int(k), err / norm if norm > 0 else 0.0))
    return out


def zipf_stats(q) -> list[tuple[int, float]]:
    """(rank, natural log of frequency) with rank 1 the most frequent token."""
    q = np.sort(np.asarray(q, dtype=np.float64))[::-1]
    return [(i + 1, float(np.log(v))) for i, v in enumerate(q)]


def zipf_slope(q) -> float:
    """Least-squares slope of log-frequency against log-rank."""
    stats = zipf_stats(q)
    x = np.log([r for r, _ in stats])
    y = np.array([v for _, v in stats])
    return float(np.polyfit(x, y, 1)[0])


def gen_zipf_embedding(n: int, dim: int, true_clusters: int, noise_level: float, seed: int):
    """Synthetic embedding matrix with Zipfian token counts.

    Counts are ``floor(100 N / rank)`` (never below 1). Tokens are split into
    ``true_clusters`` contiguous frequency bands; each band owns a random
    subspace of dimension ``dim // (2 * true_clusters)`` and its rows are
    Gaussian combinations of that basis plus i.i.d. noise with standard
    deviation ``noise_level``.

    Returns ``(A, q, assignment, bases)``.
    """
    if n < 1 or dim < 1 or not 1 <= true_clusters <= n:
        raise InvalidInputError("need n >= 1, dim >= 1 and 1 <= true_clusters <= n")
    if dim < 2 * true_clusters:
        raise InvalidInputError("need dim >= 2 * true_clusters")
    if noise_level < 0:
        raise InvalidInputError("noise_level must be nonnegative")
    rng = np.random.default_rng(seed)
    sub = max(1, dim // (2 * true_clusters))
    q = np.maximum(1.0, np.floor(100.0 * n / np.arange(1, n + 1)))
    assignment = (np.arange(n) * true_clusters) // n
    bases = [np.linalg.qr(rng.standard_normal((dim, sub)))[0] for _ in range(true_clusters)]
    A = np.empty((n, dim))
    for t, basis in enumerate(bases):
        rows = np.flatnonzero(assignment == t)
        A[rows] = rng.standard_normal((rows.size, sub)) @ basis.T
    A += noise_level * rng.standard_normal((n, dim))
    return A, q, assignment, bases


STRATEGIES = ("vanilla-svd", "weighted", "block", "block-dynamic-rank", "refined")


@dataclass(frozen=True)
class AblationRow:
    strategy: str
    parameter_count: int
    weighted_error: float
    unweighted_error: float


def _single_block_rank(n, d, budget):
    return min(budget // (n + d), n, d)


def ablation_run(A, q, c: int, budget: int, cfg: Optional[RefineConfig] = None) -> list[AblationRow]:
    """Add the block-wise strategies one at a time at a matched budget.

    The single-block SVD has the coarsest budget granularity, so its actual
    cost becomes the common budget every other strategy fills from below.
    """
    A = as_matrix(A)
    n, d = A.shape
    q = frequency_table(q, n)
    k = _single_block_rank(n, d, int(budget))
    if k < 1:
        raise InvalidInputError(f"budget {budget} cannot fit a rank-1 factorisation")
    matched = (n + d) * k
    if k == min(n, d):
        # vanilla is already exact; let the block strategies reach full rank too
        matched = max(matched, int(budget))

    rows = []

    def add(name, model):
        rows.append(AblationRow(
            strategy=name,
            parameter_count=int(memory_footprint(model).parameter_count),
            weighted_error=weighted_objective(A, q, model),
            unweighted_error=unweighted_error(A, model),
        ))

    add("vanilla-svd", lowrank_baseline(A, k))
    add("weighted", weighted_lowrank(A, q, k))

    part = init_partition_by_frequency(q, c)
    floor = int(np.sum(part.sizes + d))
    if matched < floor:
        raise InvalidInputError(f"budget {matched} is below the {c}-block floor {floor}")
    uniform = fill_ranks(part.with_ranks([1] * c), d, matched)
    add("block", fit_blocks(A, uniform, q))

    r = rank_budget_solve(part, q, d, matched)
    dynamic = fill_ranks(assign_ranks(part, q, r, d), d, matched,
                         weights=cluster_mean_frequencies(part, q))
    dyn_model = fit_blocks(A, dynamic, q)
    add("block-dynamic-rank", dyn_model)
    add("refined", refine(A, q, dyn_model, cfg, max_params=matched))
    return rows
