"""Frequency-weighted block low-rank compression for embedding matrices."""
from .baselines import (
    PrunedMatrix,
    QuantizedBlockModel,
    QuantizedMatrix,
    dequantize,
    lowrank_baseline,
    prune,
    prune_to_budget,
    quantize_model,
    quantize_uniform,
)
from .compressor import (
    BlockLowRankModel,
    BlockPartition,
    RefineConfig,
    assign_ranks,
    fill_ranks,
    fit_blocks,
    frequency_table,
    group_reduce,
    init_partition_by_frequency,
    rank_budget_solve,
    reconstruct_full,
    reconstruct_row,
    refine,
    weighted_lowrank,
)
from .errors import (
    BadMagicError,
    BadVersionError,
    FormatError,
    FrequencyFileError,
    GroupReduceError,
    InvalidInputError,
    PartitionError,
    TruncatedError,
)
from .fileio import load_model, read_frequencies, read_matrix, save_model, write_matrix
from .metrics import (
    AblationRow,
    MemoryReport,
    ablation_run,
    error_curve,
    gen_zipf_embedding,
    memory_footprint,
    spectrum,
    weighted_objective,
    zipf_stats,
)
from .numlin import (
    FactorPair,
    SvdResult,
    frobenius_error,
    project_residual,
    svd_truncated,
)

__version__ = "0.1.0"
