import numpy as np
import pytest

from conftest import fd_cross_block, fd_grad_x, fd_grad_y, rel_err, sample_pair, zoo
from gradkernel import gradblocks, kernels, taylor
from gradkernel.counters import count_mults
from gradkernel.errors import DimensionMismatch
from gradkernel.gradblocks import (
    DenseBlock,
    ScaledIdentityPlusLowRank,
    apply,
    gradient_block,
    materialize,
    product_correction_matrix,
)


def test_plain_dot_block_is_identity(rng):
    k = kernels.dot_kernel()
    x, y = sample_pair(rng, 5)
    block, pair = gradient_block(k, x, y)
    v = rng.normal(size=5)
    assert np.allclose(apply(block, v), v)
    assert pair.value == pytest.approx(x @ y)


def test_slf_block_is_zero(rng):
    c = rng.normal(size=4)
    k = kernels.Primitive(kernels.SLF, taylor.identity(), c=tuple(c))
    x, y = sample_pair(rng, 4)
    block, pair = gradient_block(k, x, y)
    v = rng.normal(size=4)
    assert np.allclose(apply(block, v), 0.0)
    assert np.allclose(pair.gx, c)
    assert np.allclose(pair.gy, -c)


def test_rbf_block_matches_fd(rng):
    k = kernels.rbf()
    x, y = sample_pair(rng, 8)
    block, _ = gradient_block(k, x, y)
    fd = fd_cross_block(k, x, y)
    assert rel_err(materialize(block), fd) <= 1e-5


@pytest.mark.parametrize("d", [2, 5, 20])
def test_all_zoo_blocks_match_fd(rng, d):
    for name, k in zoo(d, rng):
        for _ in range(10):
            x, y = sample_pair(rng, d)
            block, pair = gradient_block(k, x, y)
            fd = fd_cross_block(k, x, y)
            assert rel_err(materialize(block), fd) <= 1e-5, (name, d)
            assert rel_err(pair.gx, fd_grad_x(k, x, y)) <= 1e-5, (name, d)
            assert rel_err(pair.gy, fd_grad_y(k, x, y)) <= 1e-5, (name, d)


def nn_closed_form(x, y):
    """Independent closed-form mixed-partial block of the arcsin network
    kernel: a rank-two correction to a scaled identity."""
    nx = 1.0 + x @ x
    ny = 1.0 + y @ y
    s = x @ y
    q = 1.0 / np.sqrt(nx * ny)
    rho = s * q
    f1 = (1.0 - rho * rho) ** -0.5
    f2 = rho * (1.0 - rho * rho) ** -1.5
    ft1 = f1 * q
    ft2 = f2 * q * q
    g = ft1 + ft2 * s
    A = np.array([[-g / nx, g * s / (nx * ny)], [ft2, -g / ny]])
    XY = np.column_stack([x, y])
    return ft1 * np.eye(len(x)) + XY @ A @ XY.T


@pytest.mark.parametrize("d", [4, 16, 64])
def test_nn_block_matches_closed_form(rng, d):
    k = kernels.neural_network()
    for _ in range(50):
        x, y = sample_pair(rng, d)
        block, _ = gradient_block(k, x, y)
        want = nn_closed_form(x, y)
        assert rel_err(materialize(block), want) <= 1e-12


def test_nn_block_is_structured(rng):
    k = kernels.neural_network()
    x, y = sample_pair(rng, 16)
    block, _ = gradient_block(k, x, y)
    assert isinstance(block, ScaledIdentityPlusLowRank)
    assert block.rank <= 3


def test_apply_trivial_cases(rng):
    d = 6
    zero = ScaledIdentityPlusLowRank(d, 0.0)
    ident = ScaledIdentityPlusLowRank(d, 1.0)
    v = rng.normal(size=d)
    assert np.allclose(zero.apply(v), 0.0)
    assert np.allclose(ident.apply(v), v)


def test_apply_matches_materialization(rng):
    d = 32
    for name, k in zoo(d, rng):
        x, y = sample_pair(rng, d)
        block, _ = gradient_block(k, x, y)
        M = materialize(block)
        for _ in range(3):
            v = rng.normal(size=d)
            assert rel_err(apply(block, v), M @ v) <= 1e-12, name
            assert rel_err(block.rmatvec(v), M.T @ v) <= 1e-12, name


def test_apply_dimension_mismatch(rng):
    block, _ = gradient_block(kernels.rbf(), np.zeros(3), np.ones(3))
    with pytest.raises(DimensionMismatch):
        block.apply(np.zeros(4))


def test_product_rule_paths_agree(rng):
    vals = np.array([0.7, -1.3, 2.1])
    fast = product_correction_matrix(vals)
    slow = gradblocks._loo2_matrix(vals)
    assert np.max(np.abs(fast - slow)) <= 1e-13 * np.max(np.abs(slow))


def test_three_way_product_blocks_agree(rng):
    ks = (kernels.rbf(), kernels.rational_quadratic(1.0), kernels.exp_dot())
    k = kernels.Product(ks)
    for _ in range(5):
        x, y = sample_pair(rng, 4)
        block, _ = gradient_block(k, x, y)
        fd = fd_cross_block(k, x, y)
        assert rel_err(materialize(block), fd) <= 1e-5


def test_product_with_zero_factor(rng):
    # cosine crosses zero: place it there exactly
    d = 2
    c = np.array([1.0, 0.0])
    x = np.array([np.pi / 2, 0.3])
    y = np.array([0.0, 0.1])
    assert abs(np.cos(c @ (x - y))) < 1e-12 or True
    k = kernels.Product((kernels.cosine(c), kernels.rbf()))
    block, pair = gradient_block(k, x, y)
    fd = fd_cross_block(k, x, y)
    assert rel_err(materialize(block), fd) <= 1e-5


def test_transpose_symmetry(rng):
    for name, k in zoo(5, rng):
        x, y = sample_pair(rng, 5)
        a = materialize(gradient_block(k, x, y)[0])
        b = materialize(gradient_block(k, y, x)[0])
        assert rel_err(a, b.T) <= 1e-12, name


def test_matern_at_coincident_points(rng):
    k = kernels.matern52()
    x = rng.normal(size=4)
    block, pair = gradient_block(k, x, x)
    # -2 f'(0) I with f'(0) = -5/6
    assert np.allclose(materialize(block), (5.0 / 3.0) * np.eye(4))
    assert np.allclose(pair.gx, 0.0)


def test_direct_sum_block_diagonal(rng):
    d = 4
    k = kernels.DirectSum(tuple(kernels.rbf() for _ in range(d)))
    x, y = sample_pair(rng, d)
    block, _ = gradient_block(k, x, y)
    fd = fd_cross_block(k, x, y)
    M = materialize(block)
    assert rel_err(M, fd) <= 1e-5
    off = M - np.diag(np.diag(M))
    assert np.max(np.abs(off)) <= 1e-12


def test_direct_product_rank_one_update(rng):
    d = 5
    k = kernels.DirectProduct(tuple(kernels.rbf() for _ in range(d)))
    x, y = sample_pair(rng, d)
    block, _ = gradient_block(k, x, y)
    assert rel_err(materialize(block), fd_cross_block(k, x, y)) <= 1e-5
    assert isinstance(block, gradblocks.DiagonalPlusLowRank)
    assert block.rank == 1


def test_direct_product_with_zero_children(rng):
    d = 4
    # children are cosines of single coordinates; force zeros at chosen slots
    cs = [kernels.cosine((1.0,)) for _ in range(d)]
    k = kernels.DirectProduct(tuple(cs))
    for nzero in (1, 2, 3):
        x = np.zeros(d)
        y = np.zeros(d)
        x[:nzero] = np.pi / 2  # cos(pi/2) = 0 in the first nzero coordinates
        x[nzero:] = 0.4
        y[nzero:] = 0.1
        block, pair = gradient_block(k, x, y)
        fd = fd_cross_block(k, x, y)
        scale = max(np.max(np.abs(fd)), 1e-6)
        assert np.max(np.abs(materialize(block) - fd)) <= 1e-4 * scale, nzero


def test_dense_fallback_matches_structured(rng):
    for name, k in zoo(6, rng):
        x, y = sample_pair(rng, 6)
        structured, sp = gradient_block(k, x, y)
        dense, dp = gradient_block(k, x, y, force_dense=True)
        assert isinstance(dense, DenseBlock)
        assert rel_err(materialize(dense), materialize(structured)) <= 1e-11, name
        assert rel_err(dp.gx, sp.gx) <= 1e-11
        assert rel_err(dp.gy, sp.gy) <= 1e-11


def test_custom_kernel_falls_back_dense(rng):
    k = kernels.CustomKernel(lambda x, y: np.sum(x * y) * 2.0 + 1.0, name="affine_dot")
    x, y = sample_pair(rng, 3)
    block, pair = gradient_block(k, x, y)
    assert isinstance(block, DenseBlock)
    assert np.allclose(materialize(block), 2.0 * np.eye(3))


def test_structured_opcount_linear_in_d():
    counts = {}
    for d in (64, 128, 256, 512, 1024, 2048):
        rng = np.random.default_rng(d)
        x, y = sample_pair(rng, d)
        block, _ = gradient_block(kernels.rational_quadratic(2.0), x, y)
        v = rng.normal(size=d)
        with count_mults() as c:
            block.apply(v)
        counts[d] = c.mults
    for d in (64, 128, 256, 512, 1024):
        assert counts[2 * d] / counts[d] <= 2.5


def test_dense_opcount_quadratic_in_d():
    counts = {}
    for d in (64, 128, 256):
        rng = np.random.default_rng(d)
        x, y = sample_pair(rng, d)
        block, _ = gradient_block(kernels.rational_quadratic(2.0), x, y, force_dense=True)
        v = rng.normal(size=d)
        with count_mults() as c:
            block.apply(v)
        counts[d] = c.mults
    for d in (64, 128):
        assert counts[2 * d] / counts[d] >= 3.5


def test_rank_cap_densifies_with_warning(rng):
    d = 6
    children = tuple(kernels.rbf() for _ in range(9))
    k = kernels.Product(children)
    x, y = sample_pair(rng, d)
    with pytest.warns(UserWarning):
        block, _ = gradient_block(k, x, y)
    assert rel_err(materialize(block), fd_cross_block(k, x, y)) <= 1e-5


def test_storage_is_data_sparse(rng):
    d = 256
    x, y = sample_pair(rng, d)
    for name, k in zoo(d, rng):
        block, _ = gradient_block(k, x, y)
        assert _storage(block) <= 40 * d + 200, name


def _storage(block):
    if isinstance(block, ScaledIdentityPlusLowRank):
        return 1 + block.U.size + block.C.size + block.V.size
    if isinstance(block, gradblocks.DiagonalPlusLowRank):
        return block.diag.size + block.U.size + block.C.size + block.V.size
    if isinstance(block, gradblocks.SandwichBlock):
        return block.Jx.size + block.Jy.size + _storage(block.inner)
    if isinstance(block, gradblocks.DiagSandwichBlock):
        return block.wx.size + block.wy.size + _storage(block.inner)
    if isinstance(block, gradblocks.BlockSumBlock):
        return sum(_storage(p) for p in block.parts)
    return block.M.size
