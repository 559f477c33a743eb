"""Shared oracles and fixtures.

Finite differences are the independent check for every derivative the
structured engine produces: central differences of the plain kernel
evaluation, with steps tuned per derivative order.
"""

import numpy as np
import pytest

from gradkernel import kernels
from gradkernel.kernels import evaluate


def sample_pair(rng, d, spread=1.0):
    """Random input pair scaled so squared distances stay O(1) in any d."""
    x = rng.normal(size=d) / np.sqrt(d)
    y = x + spread * rng.normal(size=d) / np.sqrt(d)
    return x, y


def rel_err(got, want, floor=1e-12):
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    scale = max(np.max(np.abs(want)), floor)
    return np.max(np.abs(got - want)) / scale


# --- finite-difference oracles -------------------------------------------------

def fd_grad_x(k, x, y, h=1e-6):
    d = len(x)
    g = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        g[i] = (evaluate(k, x + e, y) - evaluate(k, x - e, y)) / (2 * h)
    return g


def fd_grad_y(k, x, y, h=1e-6):
    d = len(y)
    g = np.empty(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        g[j] = (evaluate(k, x, y + e) - evaluate(k, x, y - e)) / (2 * h)
    return g


def fd_cross_block(k, x, y, h=3e-5):
    """d^2 k / dx_i dy_j by 4-point central differences."""
    d = len(x)
    out = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(d):
            ej = np.zeros(d)
            ej[j] = h
            out[i, j] = (
                evaluate(k, x + ei, y + ej)
                - evaluate(k, x + ei, y - ej)
                - evaluate(k, x - ei, y + ej)
                + evaluate(k, x - ei, y - ej)
            ) / (4 * h * h)
    return out


def fd_hess_x(fn, x, h=1e-4):
    """Hessian of a scalar function of one vector argument."""
    d = len(x)
    out = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        for j in range(i, d):
            if i == j:
                out[i, i] = (fn(x + ei) - 2 * fn(x) + fn(x - ei)) / (h * h)
            else:
                ej = np.zeros(d)
                ej[j] = h
                out[i, j] = out[j, i] = (
                    fn(x + ei + ej) - fn(x + ei - ej) - fn(x - ei + ej) + fn(x - ei - ej)
                ) / (4 * h * h)
    return out


def _fd_hess_grad_step(k, x, y, h):
    d = len(x)
    out = np.empty((d, d, d))
    for c in range(d):
        ec = np.zeros(d)
        ec[c] = h
        Hp = fd_hess_x(lambda u: evaluate(k, u, y + ec), x, h)
        Hm = fd_hess_x(lambda u: evaluate(k, u, y - ec), x, h)
        out[:, :, c] = (Hp - Hm) / (2 * h)
    # vec position of (a, b) is b*d + a (column-major)
    return out.transpose(1, 0, 2).reshape(d * d, d)


def fd_hess_grad(k, x, y, h=4e-3):
    """d^3 k / dx_a dx_b dy_c as a (d^2, d) column-major-vec matrix,
    Richardson-extrapolated to fourth order."""
    return (4.0 * _fd_hess_grad_step(k, x, y, h / 2) - _fd_hess_grad_step(k, x, y, h)) / 3.0


def _fd_hess_hess_step(k, x, y, h):
    d = len(x)
    out = np.empty((d, d, d, d))
    for c in range(d):
        ec = np.zeros(d)
        ec[c] = h
        for e in range(c, d):
            if c == e:
                Hp = fd_hess_x(lambda u: evaluate(k, u, y + ec), x, h)
                H0 = fd_hess_x(lambda u: evaluate(k, u, y), x, h)
                Hm = fd_hess_x(lambda u: evaluate(k, u, y - ec), x, h)
                block = (Hp - 2 * H0 + Hm) / (h * h)
            else:
                ee = np.zeros(d)
                ee[e] = h
                Hpp = fd_hess_x(lambda u: evaluate(k, u, y + ec + ee), x, h)
                Hpm = fd_hess_x(lambda u: evaluate(k, u, y + ec - ee), x, h)
                Hmp = fd_hess_x(lambda u: evaluate(k, u, y - ec + ee), x, h)
                Hmm = fd_hess_x(lambda u: evaluate(k, u, y - ec - ee), x, h)
                block = (Hpp - Hpm - Hmp + Hmm) / (4 * h * h)
            out[:, :, c, e] = block
            out[:, :, e, c] = block
    # vec (a,b) runs column-major over rows, (c,e) over columns
    return out.transpose(1, 0, 3, 2).reshape(d * d, d * d)


def fd_hess_hess(k, x, y, h=8e-3):
    """d^4 k / dx_a dx_b dy_c dy_e as a (d^2, d^2) matrix, both vecs
    column-major, Richardson-extrapolated to fourth order."""
    return (4.0 * _fd_hess_hess_step(k, x, y, h / 2) - _fd_hess_hess_step(k, x, y, h)) / 3.0


# --- the kernel zoo used across suites ------------------------------------------

def zoo(d, rng):
    """All named kernels, with any vector parameters drawn for dimension d."""
    c = rng.normal(size=d)
    freqs = rng.normal(size=(2, d))
    ls = rng.uniform(0.6, 1.8, size=d)
    U = rng.normal(size=(min(3, d), d)) / np.sqrt(d)
    return [
        ("rbf", kernels.rbf()),
        ("rq", kernels.rational_quadratic(2.0)),
        ("matern52", kernels.matern52()),
        ("poly", kernels.polynomial(3, 1.0)),
        ("cosine", kernels.cosine(c)),
        ("expdot", kernels.exp_dot()),
        ("nn", kernels.neural_network()),
        ("rbfnet", kernels.rbf_network()),
        ("sm", kernels.spectral_mixture([0.7, 0.3], [1.0, 1.4], freqs)),
        ("qm", kernels.quadratic_mixture(1.0)),
        ("ard_rbf", kernels.ard(ls, kernels.rbf())),
        ("linwarp_rbf", kernels.linear_warp(U, kernels.rbf())),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
