import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_weighted_objective(A, q, recon):
    total = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            total += q[i] * (A[i, j] - recon[i, j]) ** 2
    return total
