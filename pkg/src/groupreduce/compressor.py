"""Frequency-weighted block low-rank approximation (GroupReduce).

Rows of an embedding matrix are grouped into clusters by token frequency,
every cluster gets a weighted low-rank factorisation with a rank that grows
with the cluster's mean frequency, and the grouping is then refined by moving
rows to the cluster whose basis reconstructs them best.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .numlin import FactorPair, as_matrix, project_residuals, svd_truncated

logger = logging.getLogger(__name__)


def frequency_table(counts, n: Optional[int] = None) -> np.ndarray:
    """Turn raw token counts into positive weights.

    Counts below 1 (unseen tokens) are floored at 1 so every row stays
    representable in the weighted objective.
    """
    q = np.asarray(counts, dtype=np.float64)
    if q.ndim != 1:
        raise InvalidInputError("frequency table must be 1-D")
    if n is not None and q.shape[0] != n:
        raise InvalidInputError(
            f"frequency table has {q.shape[0]} entries, matrix has {n} rows"
        )
    if not np.all(np.isfinite(q)) or np.any(q < 0):
        raise InvalidInputError("frequencies must be finite and nonnegative")
    return np.maximum(q, 1.0)


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint clusters of row indices, optionally with a rank per cluster.

    ``members[p]`` lists the rows of cluster ``p``; its order is the row order
    of that cluster's ``U`` factor.
    """

    members: tuple
    n_rows: int
    ranks: Optional[tuple] = None
    assignment: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        members = tuple(np.asarray(m, dtype=np.int64) for m in self.members)
        object.__setattr__(self, "members", members)
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(int(k) for k in self.ranks))
        assignment = np.full(self.n_rows, -1, dtype=np.int64)
        for p, m in enumerate(members):
            if m.ndim != 1 or m.size == 0:
                raise InvalidInputError(f"cluster {p} is empty")
            if m.min() < 0 or m.max() >= self.n_rows:
                raise InvalidInputError(f"cluster {p} has out-of-range indices")
            if np.any(assignment[m] != -1) or np.unique(m).size != m.size:
                raise InvalidInputError(f"cluster {p} repeats an already assigned row")
            assignment[m] = p
        if np.any(assignment < 0):
            raise InvalidInputError("clusters do not cover every row")
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)
        if self.ranks is not None and len(self.ranks) != len(members):
            raise InvalidInputError("need exactly one rank per cluster")

    @classmethod
    def from_assignment(cls, assignment, n_clusters: int, ranks=None) -> "BlockPartition":
        assignment = np.asarray(assignment, dtype=np.int64)
        members = tuple(np.flatnonzero(assignment == p) for p in range(n_clusters))
        return cls(members=members, n_rows=assignment.shape[0], ranks=ranks)

    @property
    def n_clusters(self) -> int:
        return len(self.members)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members], dtype=np.int64)

    def with_ranks(self, ranks) -> "BlockPartition":
        return BlockPartition(members=self.members, n_rows=self.n_rows, ranks=tuple(ranks))

    def check_ranks(self, dim: int) -> None:
        if self.ranks is None:
            raise InvalidInputError("partition has no ranks assigned")
        for p, (m, k) in enumerate(zip(self.members, self.ranks)):
            if not 1 <= k <= min(m.size, dim):
                raise InvalidInputError(
                    f"cluster {p}: rank {k} outside [1, {min(m.size, dim)}]"
                )

    def param_count(self, dim: int) -> int:
        """Closed-form float count ``sum_p (|V_p| + D) * k_p``."""
        if self.ranks is None:
            raise InvalidInputError("partition has no ranks assigned")
        return sum((int(m.size) + dim) * k for m, k in zip(self.members, self.ranks))


@dataclass(frozen=True)
class BlockLowRankModel:
    partition: BlockPartition
    factors: tuple  # one FactorPair per cluster
    dims: tuple  # (N, D)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "dims", (int(self.dims[0]), int(self.dims[1])))
        n, d = self.dims
        part = self.partition
        if part.n_rows != n or part.ranks is None:
            raise InvalidInputError("partition does not match model dimensions")
        if len(self.factors) != part.n_clusters:
            raise InvalidInputError("need exactly one factor pair per cluster")
        for p, (f, m, k) in enumerate(zip(self.factors, part.members, part.ranks)):
            if f.U.shape != (m.size, k) or f.V.shape != (d, k):
                raise InvalidInputError(
                    f"cluster {p}: factor shapes {f.U.shape}, {f.V.shape} "
                    f"do not match ({m.size}, {k}) and ({d}, {k})"
                )

    @property
    def n_clusters(self) -> int:
        return self.partition.n_clusters

    def param_count(self) -> int:
        return self.partition.param_count(self.dims[1])


@dataclass(frozen=True)
class RefineConfig:
    t_max: int = 20
    m_min: Optional[int] = None  # None: max(1, ceil(N / 1000))
    move_frac: float = 0.10

    def __post_init__(self):
        if self.t_max < 0:
            raise InvalidInputError("t_max must be >= 0")
        if self.m_min is not None and self.m_min < 1:
            raise InvalidInputError("m_min must be >= 1")
        if not 0 < self.move_frac <= 1:
            raise InvalidInputError("move_frac must be in (0, 1]")

    def min_moves(self, n_rows: int) -> int:
        if self.m_min is not None:
            return self.m_min
        return max(1, math.ceil(n_rows / 1000))


def default_clusters(n_rows: int) -> int:
    return 5 if n_rows <= 50_000 else 20


def weighted_lowrank(A_block, q_block, k: int) -> FactorPair:
    """Rank-``k`` minimiser of ``sum_ij q_i (A_ij - U_i V_j^T)^2``.

    Row weights make the problem an ordinary SVD of ``diag(sqrt(q)) A``; the
    left factor is mapped back through ``diag(1/sqrt(q))``.
    """
    A_block = as_matrix(A_block, "block")
    q_block = np.asarray(q_block, dtype=np.float64)
    if q_block.shape != (A_block.shape[0],):
        raise InvalidInputError(
            f"need {A_block.shape[0]} weights, got shape {q_block.shape}"
        )
    if not np.all(np.isfinite(q_block)) or np.any(q_block <= 0):
        raise InvalidInputError("weights must be finite and strictly positive")
    sq = np.sqrt(q_block)
    res = svd_truncated(sq[:, None] * A_block, k)
    return FactorPair(U=(res.U * res.S) / sq[:, None], V=res.V)


def init_partition_by_frequency(q, c: int) -> BlockPartition:
    """Equal-size buckets of the frequency-sorted vocabulary.

    Cluster 0 holds the most frequent tokens; frequency ties go to the lower
    token index first. The first ``N mod c`` clusters get one extra row.
    """
    q = np.asarray(q, dtype=np.float64)
    n = q.shape[0]
    if not isinstance(c, (int, np.integer)) or not 1 <= c <= n:
        raise InvalidInputError(f"cluster count must be in [1, {n}], got {c!r}")
    order = np.argsort(-q, kind="stable")
    base, extra = divmod(n, c)
    members, start = [], 0
    for p in range(c):
        size = base + (1 if p < extra else 0)
        members.append(np.sort(order[start:start + size]))
        start += size
    return BlockPartition(members=tuple(members), n_rows=n)


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def cluster_mean_frequencies(partition: BlockPartition, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[m].mean() for m in partition.members])


def _dynamic_ranks(partition: BlockPartition, f: np.ndarray, r: float, dim: int) -> np.ndarray:
    caps = np.minimum(partition.sizes, dim)
    return np.clip(_round_half_up(f / f.min() * r), 1, caps)


def assign_ranks(partition: BlockPartition, q, r, dim: int) -> BlockPartition:
    """Ranks proportional to mean cluster frequency.

    The least frequent cluster gets ``r``; cluster ``p`` gets
    ``round(f_p / f_min * r)`` clamped to ``[1, min(|V_p|, D)]``. A base rank
    below 1 is allowed and shrinks the frequent clusters' ranks.
    """
    if not r > 0:
        raise InvalidInputError(f"base rank must be positive, got {r}")
    if any(m.size == 0 for m in partition.members):
        raise InvalidInputError("empty cluster")
    f = cluster_mean_frequencies(partition, q)
    return partition.with_ranks(_dynamic_ranks(partition, f, r, dim).tolist())


def _budget_floor(partition: BlockPartition, dim: int) -> int:
    return int(np.sum(partition.sizes + dim))


def rank_budget_solve(partition: BlockPartition, q, dim: int, budget_params: int):
    """Largest base rank whose dynamic ranks fit ``budget_params``.

    Returns an integer when base rank 1 fits. Otherwise the budget lies
    between the all-rank-1 floor and the cost of base rank 1, and the result
    is the largest fractional base rank in ``(0, 1)`` that fits (to within
    ``2**-60``).
    """
    floor = _budget_floor(partition, dim)
    if budget_params < floor:
        raise InvalidInputError(
            f"budget {budget_params} is below the all-rank-1 floor {floor}"
        )
    f = cluster_mean_frequencies(partition, q)
    sizes = partition.sizes

    def cost(r):
        return int(np.sum((sizes + dim) * _dynamic_ranks(partition, f, r, dim)))

    if cost(1) > budget_params:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = (lo + hi) / 2
            if cost(mid) <= budget_params:
                lo = mid
            else:
                hi = mid
        return lo

    # beyond this every cluster is already at its cap, so the cost is flat
    r_cap = int(np.max(np.minimum(sizes, dim)))
    lo, hi = 1, 2
    while hi <= r_cap and cost(hi) <= budget_params:
        lo, hi = hi, hi * 2
    hi = min(hi, r_cap + 1)
    # invariant: cost(lo) <= budget, and hi > r_cap or cost(hi) > budget
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cost(mid) <= budget_params:
            lo = mid
        else:
            hi = mid
    return lo


def fill_ranks(partition: BlockPartition, dim: int, budget_params: int, weights=None) -> BlockPartition:
    """Spend leftover budget one rank at a time.

    The next unit goes to the cluster maximising ``weight / (k_p + 1)``
    (proportional, D'Hondt-style), ties to the lowest cluster id. Clusters at
    their cap or too large to afford are skipped.
    """
    sizes = partition.sizes
    ranks = np.array(partition.ranks, dtype=np.int64)
    caps = np.minimum(sizes, dim)
    w = np.ones(len(ranks)) if weights is None else np.asarray(weights, dtype=np.float64)
    step = sizes + dim
    spare = budget_params - int(np.sum(step * ranks))
    while True:
        ok = (ranks < caps) & (step <= spare)
        if not ok.any():
            break
        score = np.where(ok, w / (ranks + 1), -np.inf)
        p = int(np.argmax(score))
        ranks[p] += 1
        spare -= int(step[p])
    return partition.with_ranks(ranks.tolist())


def fit_blocks(A, partition: BlockPartition, q) -> BlockLowRankModel:
    """Independent weighted low-rank factorisation of every cluster."""
    A = as_matrix(A)
    q = np.asarray(q, dtype=np.float64)
    partition.check_ranks(A.shape[1])
    factors = [
        weighted_lowrank(A[m], q[m], k)
        for m, k in zip(partition.members, partition.ranks)
    ]
    return BlockLowRankModel(partition=partition, factors=factors, dims=A.shape)


def residual_table(A, model: BlockLowRankModel) -> np.ndarray:
    """``N x c`` table of projection residuals of every row onto every basis."""
    return np.column_stack([project_residuals(A, f.V) for f in model.factors])


@dataclass(frozen=True)
class MoveRecord:
    iteration: int
    moves: tuple  # (token, source, target, residual_before, residual_after)


def _select_moves(model, residuals, max_params):
    part = model.partition
    home = part.assignment
    n = home.shape[0]
    rows = np.arange(n)
    e_home = residuals[rows, home]
    best = np.argmin(residuals, axis=1)  # lowest cluster id on ties
    e_best = residuals[rows, best]
    target = np.where(e_best < e_home, best, home)
    cand = np.flatnonzero(target != home)
    cand = cand[np.lexsort((cand, e_best[cand]))]

    sizes = part.sizes.copy()
    ranks = np.array(part.ranks, dtype=np.int64)
    cost = model.param_count()
    eligible = []
    for i in cand:
        src, dst = home[i], target[i]
        # a source cluster must keep at least k_src rows
        if sizes[src] - 1 < max(1, ranks[src]):
            continue
        delta = int(ranks[dst] - ranks[src])
        if max_params is not None and cost + delta > max_params:
            continue
        sizes[src] -= 1
        cost += delta
        eligible.append(int(i))
    return eligible, target, e_home, e_best


def refine(
    A,
    q,
    model: BlockLowRankModel,
    cfg: Optional[RefineConfig] = None,
    max_params: Optional[int] = None,
    callback: Optional[Callable[[int, BlockLowRankModel, MoveRecord], None]] = None,
) -> BlockLowRankModel:
    """Move rows between clusters to lower the weighted block objective.

    Each iteration scores every row against every cluster basis, collects the
    rows whose best basis is strictly better than their own, moves the
    ``ceil(move_frac * |M|)`` of them with the smallest best residual and
    refits only the clusters that changed, keeping each cluster's rank.

    A move is skipped if it would leave its source cluster with fewer rows
    than its rank, or push the parameter count above ``max_params``.
    ``callback(t, model, record)`` is called after every executed iteration.
    """
    A = as_matrix(A)
    q = np.asarray(q, dtype=np.float64)
    cfg = cfg or RefineConfig()
    if model.dims != A.shape:
        raise InvalidInputError(f"model dims {model.dims} do not match matrix {A.shape}")
    m_min = cfg.min_moves(A.shape[0])

    residuals = residual_table(A, model)
    for t in range(1, cfg.t_max + 1):
        eligible, target, e_home, e_best = _select_moves(model, residuals, max_params)
        if len(eligible) < m_min:
            logger.debug("refine: stop at iteration %d, %d candidates", t, len(eligible))
            break
        chosen = eligible[: math.ceil(cfg.move_frac * len(eligible))]

        assignment = model.partition.assignment.copy()
        changed = set()
        for i in chosen:
            changed.update((int(assignment[i]), int(target[i])))
            assignment[i] = target[i]
        part = BlockPartition.from_assignment(
            assignment, model.n_clusters, ranks=model.partition.ranks
        )
        factors = list(model.factors)
        for p in sorted(changed):
            m = part.members[p]
            factors[p] = weighted_lowrank(A[m], q[m], part.ranks[p])
        record = MoveRecord(
            iteration=t,
            moves=tuple(
                (i, int(model.partition.assignment[i]), int(target[i]),
                 float(e_home[i]), float(e_best[i]))
                for i in chosen
            ),
        )
        model = BlockLowRankModel(partition=part, factors=factors, dims=model.dims)
        logger.debug("refine: iteration %d moved %d of %d", t, len(chosen), len(eligible))
        if callback is not None:
            callback(t, model, record)
        for p in changed:
            residuals[:, p] = project_residuals(A, factors[p].V)
    return model


def group_reduce(
    A,
    q,
    c: Optional[int] = None,
    budget: Optional[int] = None,
    base_rank: Optional[int] = None,
    cfg: Optional[RefineConfig] = None,
    callback=None,
) -> BlockLowRankModel:
    """Full pipeline: frequency buckets, dynamic ranks, weighted fit, refinement.

    Exactly one of ``budget`` (a parameter count) or ``base_rank`` must be
    given. With a budget the base rank is the largest that fits, leftover
    parameters are handed out proportionally to cluster frequency, and
    refinement is not allowed to exceed the budget.
    """
    A = as_matrix(A)
    n, d = A.shape
    q = frequency_table(q, n)
    if (budget is None) == (base_rank is None):
        raise InvalidInputError("give exactly one of budget or base_rank")
    c = default_clusters(n) if c is None else c
    part = init_partition_by_frequency(q, c)
    if budget is not None:
        r = rank_budget_solve(part, q, d, budget)
        part = assign_ranks(part, q, r, d)
        part = fill_ranks(part, d, budget, weights=cluster_mean_frequencies(part, q))
    else:
        part = assign_ranks(part, q, base_rank, d)
    model = fit_blocks(A, part, q)
    return refine(A, q, model, cfg, max_params=budget, callback=callback)


def reconstruct_row(model: BlockLowRankModel, i: int) -> np.ndarray:
    n = model.dims[0]
    if not 0 <= i < n:
        raise InvalidInputError(f"row index {i} out of range [0, {n})")
    p = int(model.partition.assignment[i])
    j = int(np.flatnonzero(model.partition.members[p] == i)[0])
    f = model.factors[p]
    return f.U[j] @ f.V.T


def reconstruct_full(model: BlockLowRankModel) -> np.ndarray:
    out = np.empty(model.dims, dtype=np.float64)
    for m, f in zip(model.partition.members, model.factors):
        out[m] = f.U @ f.V.T
    return out


def block_objective(A, q, model: BlockLowRankModel) -> float:
    """Frequency-weighted squared reconstruction error of a block model."""
    A = as_matrix(A)
    q = np.asarray(q, dtype=np.float64)
    total = 0.0
    for m, f in zip(model.partition.members, model.factors):
        diff = A[m] - f.U @ f.V.T
        total += float(np.sum(q[m] * np.sum(diff * diff, axis=1)))
    return total
