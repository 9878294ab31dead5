from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupreduce.baselines import (
    dequantize,
    lowrank_baseline,
    prune,
    prune_to_budget,
    quantize_model,
    quantize_uniform,
)
from groupreduce.compressor import fit_blocks, init_partition_by_frequency, reconstruct_full
from groupreduce.errors import InvalidInputError
from groupreduce.numlin import FactorPair, frobenius_error


def test_lowrank_identity_and_rank_one(rng):
    assert frobenius_error(np.eye(4), lowrank_baseline(np.eye(4), 4).product()) < 1e-14
    A = np.outer(rng.standard_normal(6), rng.standard_normal(3))
    assert frobenius_error(A, lowrank_baseline(A, 1).product()) < 1e-12


def test_lowrank_tail_energy(rng):
    A = rng.standard_normal((8, 5))
    s = np.linalg.svd(A, compute_uv=False)
    err = frobenius_error(A, lowrank_baseline(A, 3).product())
    assert err ** 2 == pytest.approx(s[3] ** 2 + s[4] ** 2, rel=1e-10)


EXAMPLE = np.array([[1.0, -0.1], [0.2, -3.0]])


def as_triples(p):
    return sorted(zip(p.rows.tolist(), p.cols.tolist(), p.values.tolist()))


def test_prune_threshold_zero_keeps_everything(rng):
    A = rng.uniform(0.5, 1.0, (4, 3)) * rng.choice([-1, 1], (4, 3))
    p = prune(A, 0.0)
    assert p.nnz == 12 and p.param_count() == 24
    np.testing.assert_array_equal(p.to_dense(), A)


def test_prune_threshold_zero_skips_zeros():
    p = prune(np.array([[0.0, 1.0]]), 0.0)
    assert as_triples(p) == [(0, 1, 1.0)]


def test_prune_everything():
    p = prune(EXAMPLE, 3.5)
    assert p.nnz == 0 and p.param_count() == 0


def test_prune_example():
    p = prune(EXAMPLE, 0.2)
    assert as_triples(p) == [(0, 0, 1.0), (1, 0, 0.2), (1, 1, -3.0)]
    assert p.param_count() == 6


def test_prune_negative_threshold():
    with pytest.raises(InvalidInputError):
        prune(EXAMPLE, -0.1)


def test_prune_idempotent(rng):
    A = rng.standard_normal((7, 5))
    once = prune(A, 0.6).to_dense()
    np.testing.assert_array_equal(prune(once, 0.6).to_dense(), once)


def test_prune_to_budget_examples(rng):
    A = rng.standard_normal((3, 4))
    assert prune_to_budget(A, 2 * 12).nnz == 12
    assert prune_to_budget(A, 0).nnz == 0
    p = prune_to_budget(EXAMPLE, 6)
    # oracle: sort every entry by magnitude and keep the top three
    flat = sorted(EXAMPLE.ravel().tolist(), key=abs, reverse=True)[:3]
    assert sorted(p.values.tolist()) == sorted(flat) == [-3.0, 0.2, 1.0]
    assert p.param_count() <= 6


def test_prune_to_budget_ties_row_major():
    A = np.array([[1.0, -1.0], [1.0, 0.5]])
    p = prune_to_budget(A, 4)
    assert as_triples(p) == [(0, 0, 1.0), (0, 1, -1.0)]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 80))
def test_prune_to_budget_maximal(seed, budget):
    A = np.random.default_rng(seed).standard_normal((5, 6))
    p = prune_to_budget(A, budget)
    assert p.param_count() <= budget
    assert p.nnz == min(budget // 2, 30)
    kept = np.abs(p.values)
    dropped = np.abs(A[p.to_dense() == 0])
    if kept.size and dropped.size:
        assert kept.min() >= dropped.max()


def test_quantize_constant_matrix():
    M = np.full((3, 2), -1.25)
    for b in (1, 4, 16):
        Q = quantize_uniform(M, b)
        assert np.all(Q.codes == 0)
        np.testing.assert_array_equal(dequantize(Q), M)


def test_quantize_two_bit_ladder():
    Q = quantize_uniform(np.array([[0.0, 1.0, 2.0, 3.0]]), 2)
    assert Q.codes.tolist() == [[0, 1, 2, 3]]
    np.testing.assert_allclose(dequantize(Q), [[0.375, 1.125, 1.875, 2.625]], rtol=0, atol=1e-15)


def test_quantize_one_bit():
    M = np.array([[-1.0, 1.0]])
    Q = quantize_uniform(M, 1)
    out = dequantize(Q)
    np.testing.assert_allclose(out, [[-0.5, 0.5]])
    assert np.max(np.abs(out - M)) == pytest.approx(0.5) == pytest.approx(Q.width / 2)


@pytest.mark.parametrize("bits", [0, 17, 2.0])
def test_quantize_bad_bits(bits):
    with pytest.raises(InvalidInputError):
        quantize_uniform(np.eye(2), bits)


def test_quantize_non_finite():
    with pytest.raises(InvalidInputError):
        quantize_uniform(np.array([[1.0, np.inf]]), 4)


def ulp_slack(M):
    # the half-width bound is tight at interval edges; allow a few ulps of rounding
    return 8 * np.finfo(float).eps * np.max(np.abs(M))


def test_dequantize_random_8bit(rng):
    M = rng.standard_normal((40, 30))
    out = dequantize(quantize_uniform(M, 8))
    assert np.max(np.abs(out - M)) <= (M.max() - M.min()) / 512 + ulp_slack(M)


@settings(max_examples=80, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
           elements=st.floats(-1e6, 1e6, allow_nan=False)),
    st.integers(1, 12),
)
def test_quantization_bounds(M, bits):
    Q = quantize_uniform(M, bits)
    out = dequantize(Q)
    assert Q.codes.max() <= 2 ** bits - 1
    assert np.unique(out).size <= 2 ** bits
    assert np.all(out >= Q.range_min) and np.all(out <= Q.range_max)
    assert np.all(np.abs(out - M) <= (Q.range_max - Q.range_min) / 2 ** (bits + 1) + ulp_slack(M))


def small_model(rng):
    A = rng.standard_normal((20, 6))
    q = rng.uniform(1, 10, 20)
    part = init_partition_by_frequency(q, 2).with_ranks([3, 2])
    return fit_blocks(A, part, q)


def test_quantize_model_16_bits_close(rng):
    model = small_model(rng)
    qm = quantize_model(model, 16)
    ref = reconstruct_full(model)
    out = reconstruct_full(qm.dequantized())
    assert np.linalg.norm(out - ref) <= 1e-3 * np.linalg.norm(ref)


def test_quantize_model_constant_factors_lossless(rng):
    model = small_model(rng)
    const = [FactorPair(U=np.full(f.U.shape, 0.5), V=np.full(f.V.shape, -2.0)) for f in model.factors]
    model = type(model)(partition=model.partition, factors=const, dims=model.dims)
    qm = quantize_model(model, 4)
    np.testing.assert_array_equal(reconstruct_full(qm.dequantized()), reconstruct_full(model))


def test_quantized_accounting(rng):
    model = small_model(rng)
    qm = quantize_model(model, 8)
    floats = model.param_count()
    assert qm.param_count() == Fraction(floats, 4) + 2 * 2 * model.n_clusters
    assert quantize_uniform(np.eye(3), 4).param_count() == Fraction(9 * 4, 32) + 2
