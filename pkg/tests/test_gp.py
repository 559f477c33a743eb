import numpy as np
import pytest

from conftest import rel_err, sample_pair, zoo
from gradkernel import kernels
from gradkernel.errors import DimensionMismatch
from gradkernel.gp import (
    GradObservations,
    dense_train_matrix,
    fit,
    predict_mean,
    predict_mean_grad,
    predict_var,
    train_operator,
)
from gradkernel.lazyop import noise_vector


def quadratic_data(rng, n, d):
    X = np.array([sample_pair(rng, d)[0] for _ in range(n)])
    y = np.array([x @ x for x in X])
    G = 2 * X
    return X, y, G


def test_single_zero_observation_gives_zero_alpha(rng):
    obs = GradObservations(np.zeros((1, 3)), [0.0], np.zeros((1, 3)), noise=(1e-10, 1e-10))
    post = fit(kernels.rbf(), obs)
    assert np.allclose(post.alpha, 0.0)
    assert predict_mean(post, np.zeros(3)) == pytest.approx(0.0)


def test_interpolates_values_and_gradients(rng):
    X, y, G = quadratic_data(rng, 5, 3)
    obs = GradObservations(X, y, G, noise=(1e-10, 1e-10))
    post = fit(kernels.rbf(), obs, tol=1e-12)
    for i in range(5):
        assert abs(predict_mean(post, X[i]) - y[i]) <= 1e-6
        assert np.max(np.abs(predict_mean_grad(post, X[i]) - G[i])) <= 1e-5


def test_variance_collapses_at_training_points(rng):
    X, y, G = quadratic_data(rng, 5, 3)
    obs = GradObservations(X, y, G, noise=(1e-10, 1e-10))
    post = fit(kernels.rbf(), obs, tol=1e-12)
    for i in range(5):
        assert predict_var(post, X[i], tol=1e-12) <= 1e-6


def test_prior_variance_without_data(rng):
    # a fit with almost-zero signal: variance far from data approaches prior
    k = kernels.rbf()
    obs = GradObservations(np.zeros((1, 2)) + 50.0, [0.0], np.zeros((1, 2)))
    post = fit(k, obs)
    x = np.zeros(2)
    assert predict_var(post, x) == pytest.approx(kernels.evaluate(k, x, x), abs=1e-8)


def test_matches_dense_gp_oracle(rng):
    n, d = 4, 2
    X, y, G = quadratic_data(rng, n, d)
    noise = (1e-8, 1e-8)
    obs = GradObservations(X, y, G, noise=noise)
    k = kernels.rbf()
    post = fit(k, obs, tol=1e-13)

    # independent dense route: materialized lazy operator + numpy solve
    M = train_operator(k, obs).materialize()
    M[np.arange(len(M)), np.arange(len(M))] += noise_vector(n, d, noise)
    alpha = np.linalg.solve(M, obs.rhs())
    for _ in range(5):
        xq = sample_pair(rng, d)[0]
        vals_row = np.array([kernels.evaluate(k, xq, xi) for xi in X])
        gy_rows = []
        for xi in X:
            from gradkernel.gradblocks import gradient_block

            _, pair = gradient_block(k, xq, xi)
            gy_rows.append(pair.gy)
        ks = np.concatenate([vals_row, np.concatenate(gy_rows)])
        want_mean = ks @ alpha
        want_var = kernels.evaluate(k, xq, xq) - ks @ np.linalg.solve(M, ks)
        assert abs(predict_mean(post, xq) - want_mean) <= 1e-8
        assert abs(predict_var(post, xq, tol=1e-13) - want_var) <= 1e-8


def test_direct_solver_matches_cg(rng):
    n, d = 5, 3
    X, y, G = quadratic_data(rng, n, d)
    obs = GradObservations(X, y, G, noise=(1e-8, 1e-8))
    k = kernels.quadratic_mixture(1.0)
    p_cg = fit(k, obs, tol=1e-12)
    p_direct = fit(k, obs, solver="direct")
    assert rel_err(p_cg.alpha, p_direct.alpha) <= 1e-6
    xq = sample_pair(rng, d)[0]
    assert abs(predict_mean(p_cg, xq) - predict_mean(p_direct, xq)) <= 1e-7
    assert abs(predict_var(p_cg, xq) - predict_var(p_direct, xq)) <= 1e-7


def test_dense_train_matrix_matches_lazy(rng):
    n, d = 4, 3
    X, y, G = quadratic_data(rng, n, d)
    obs = GradObservations(X, y, G)
    for name, k in zoo(d, rng):
        A = dense_train_matrix(k, obs)
        B = train_operator(k, obs).materialize()
        assert rel_err(A, 0.5 * (B + B.T)) <= 1e-10, name


def test_mean_grad_consistent_with_fd(rng):
    n, d = 5, 3
    X, y, G = quadratic_data(rng, n, d)
    obs = GradObservations(X, y, G, noise=(1e-8, 1e-8))
    post = fit(kernels.rational_quadratic(2.0), obs, tol=1e-12)
    h = 1e-6
    for _ in range(3):
        xq = sample_pair(rng, d)[0]
        g = predict_mean_grad(post, xq)
        fd = np.empty(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd[i] = (predict_mean(post, xq + e) - predict_mean(post, xq - e)) / (2 * h)
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_duplicate_observation_changes_nothing(rng):
    # near-noiseless: duplicating a point must not move the posterior
    # (with real noise it would, by halving that point's effective jitter)
    n, d = 4, 2
    X, y, G = quadratic_data(rng, n, d)
    obs1 = GradObservations(X, y, G, noise=(1e-10, 1e-10))
    X2 = np.vstack([X, X[:1]])
    y2 = np.concatenate([y, y[:1]])
    G2 = np.vstack([G, G[:1]])
    obs2 = GradObservations(X2, y2, G2, noise=(1e-10, 1e-10))
    k = kernels.rbf()
    p1 = fit(k, obs1, tol=1e-12)
    p2 = fit(k, obs2, tol=1e-12)
    for _ in range(3):
        xq = sample_pair(rng, d)[0]
        assert abs(predict_mean(p1, xq) - predict_mean(p2, xq)) <= 1e-6


def test_value_only_observations(rng):
    n, d = 6, 2
    X, y, _ = quadratic_data(rng, n, d)
    obs = GradObservations(X, y, None, noise=(1e-10, 1e-10))
    post = fit(kernels.rbf(), obs, tol=1e-12)
    for i in range(n):
        assert abs(predict_mean(post, X[i]) - y[i]) <= 1e-5
    g = predict_mean_grad(post, X[0])
    assert g.shape == (d,)


def test_interpolation_across_zoo(rng):
    # target functions are drawn from each kernel's own span (a weighted
    # combination of kernel sections), so exact interpolation is well-posed
    # for every kernel, including degenerate ones like the cosine
    from gradkernel.batch import pair_stats

    n, d = 4, 3
    X = np.array([sample_pair(rng, d)[0] for _ in range(n)])
    Z = np.array([sample_pair(rng, d)[0] for _ in range(3)])
    w = 0.5 * rng.normal(size=3)
    for name, k in zoo(d, rng):
        y = np.empty(n)
        G = np.empty((n, d))
        for i in range(n):
            vals, GX, _ = pair_stats(k, X[i], Z)
            y[i] = vals @ w
            G[i] = GX.T @ w
        obs = GradObservations(X, y, G, noise=(1e-10, 1e-10))
        post = fit(k, obs, tol=1e-13, max_iter=20000)
        for i in range(n):
            assert abs(predict_mean(post, X[i]) - y[i]) <= 1e-6, name
            assert np.max(np.abs(predict_mean_grad(post, X[i]) - G[i])) <= 1e-5, name


def test_query_dimension_checked(rng):
    X, y, G = quadratic_data(rng, 3, 2)
    post = fit(kernels.rbf(), GradObservations(X, y, G))
    with pytest.raises(DimensionMismatch):
        predict_mean(post, np.zeros(5))
