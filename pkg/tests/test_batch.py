import numpy as np
import pytest

from conftest import rel_err, sample_pair, zoo
from gradkernel import batch, gradblocks, kernels


@pytest.mark.parametrize("d", [2, 7])
def test_pair_stats_match_scalar_engine(rng, d):
    m = 9
    for name, k in zoo(d, rng):
        x = sample_pair(rng, d)[0]
        Y = np.array([sample_pair(rng, d)[1] for _ in range(m)])
        vals, GX, GY = batch.pair_stats(k, x, Y)
        for j in range(m):
            _, pair = gradblocks.gradient_block(k, x, Y[j])
            assert abs(vals[j] - pair.value) <= 1e-12 * max(1.0, abs(pair.value)), name
            assert rel_err(GX[j], pair.gx) <= 1e-12, name
            assert rel_err(GY[j], pair.gy) <= 1e-12, name


@pytest.mark.parametrize("d", [2, 7])
def test_block_apply_rows_match_scalar_engine(rng, d):
    m = 6
    for name, k in zoo(d, rng):
        x = sample_pair(rng, d)[0]
        Y = np.array([sample_pair(rng, d)[1] for _ in range(m)])
        W = rng.normal(size=(m, d))
        got = batch.gblock_apply_rows(k, x, Y, W)
        for j in range(m):
            block, _ = gradblocks.gradient_block(k, x, Y[j])
            assert rel_err(got[j], block.apply(W[j])) <= 1e-11, name


@pytest.mark.parametrize("d", [2, 5])
def test_block_rows_match_scalar_engine(rng, d):
    m = 5
    for name, k in zoo(d, rng):
        x = sample_pair(rng, d)[0]
        Y = np.array([sample_pair(rng, d)[1] for _ in range(m)])
        got = batch.gblock_rows(k, x, Y)
        for j in range(m):
            block, _ = gradblocks.gradient_block(k, x, Y[j])
            assert rel_err(got[j], block.materialize()) <= 1e-11, name


def test_direct_nodes_fall_back(rng):
    d = 3
    k = kernels.DirectProduct(tuple(kernels.rbf() for _ in range(d)))
    x = sample_pair(rng, d)[0]
    Y = np.array([sample_pair(rng, d)[1] for _ in range(4)])
    vals, GX, GY = batch.pair_stats(k, x, Y)
    for j in range(4):
        _, pair = gradblocks.gradient_block(k, x, Y[j])
        assert abs(vals[j] - pair.value) <= 1e-13
        assert rel_err(GX[j], pair.gx) <= 1e-12
