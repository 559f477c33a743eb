import numpy as np

from conftest import fd_cross_block, fd_hess_grad, fd_hess_hess, rel_err, sample_pair
from gradkernel import kernels
from gradkernel.kernels import jet_eval


def test_flat_jet_gives_value_grads_and_block(rng):
    k = kernels.rbf_network()
    x, y = sample_pair(rng, 4)
    j = jet_eval(k, x, y)
    assert abs(j.val - kernels.evaluate(k, x, y)) <= 1e-13
    assert rel_err(j.dxy, fd_cross_block(k, x, y)) <= 1e-5


def extract_nested(j, d):
    """Pull the four mixed-derivative tensors out of a nested jet."""
    k_val = j.val.val
    G = j.val.dxy
    Hx = np.array([[j.dx[a].dx[b] for b in range(d)] for a in range(d)])
    hg = np.array([[[j.dx[a].dxy[b, c] for c in range(d)] for b in range(d)] for a in range(d)])
    hh = np.array(
        [
            [
                [[j.dxy[a, c].dxy[b, e] for e in range(d)] for c in range(d)]
                for b in range(d)
            ]
            for a in range(d)
        ]
    )
    return k_val, G, Hx, hg, hh


def test_nested_jet_fourth_order_vs_fd(rng):
    d = 3
    for k in (kernels.rbf(), kernels.exp_dot(), kernels.rbf_network()):
        x, y = sample_pair(rng, d)
        j = jet_eval(k, x, y, nested=True)
        kv, G, Hx, hg, hh = extract_nested(j, d)
        assert abs(kv - kernels.evaluate(k, x, y)) <= 1e-13
        assert rel_err(G, fd_cross_block(k, x, y)) <= 1e-5
        # third order: rows (a,b) vec'd column-major, columns c
        hg_mat = hg.transpose(1, 0, 2).reshape(d * d, d)
        assert rel_err(hg_mat, fd_hess_grad(k, x, y)) <= 1e-4
        # fourth order
        hh_mat = hh.transpose(1, 0, 3, 2).reshape(d * d, d * d)
        assert rel_err(hh_mat, fd_hess_hess(k, x, y)) <= 1e-4


def test_nested_jet_linear_warp(rng):
    d, r = 3, 2
    U = rng.normal(size=(r, d))
    k = kernels.linear_warp(U, kernels.rbf())
    x, y = sample_pair(rng, d)
    j = jet_eval(k, x, y, nested=True)
    kv, G, Hx, hg, hh = extract_nested(j, d)
    assert rel_err(G, fd_cross_block(k, x, y)) <= 1e-5
    hh_mat = hh.transpose(1, 0, 3, 2).reshape(d * d, d * d)
    assert rel_err(hh_mat, fd_hess_hess(k, x, y)) <= 1e-4


def test_nested_jet_custom_kernel(rng):
    k = kernels.CustomKernel(lambda x, y: (np.sum(x * y) + 1.0) * (np.sum(x * y) + 1.0))
    d = 2
    x, y = sample_pair(rng, d)
    j = jet_eval(k, x, y, nested=True)
    kv, G, Hx, hg, hh = extract_nested(j, d)
    assert rel_err(G, fd_cross_block(k, x, y)) <= 1e-5
    hh_mat = hh.transpose(1, 0, 3, 2).reshape(d * d, d * d)
    assert rel_err(hh_mat, fd_hess_hess(k, x, y)) <= 1e-4
