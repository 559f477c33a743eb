"""Gaussian-process conditioning on joint value and gradient observations.

The training system is the value+gradient covariance operator plus
per-section jitter.  Two solver routes exist behind the same interface:
matrix-free conjugate gradients on the lazy operator (the default, constant
memory), and a dense Cholesky factorization assembled by the vectorized
batch rules (bounded size, used where many posterior queries follow, e.g.
inside the optimization loop).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import batch
from .errors import DimensionMismatch, NotConverged
from .kernels import evaluate
from .lazyop import LazyBlockMatrix, SolveReport, cg_solve, noise_vector

DIRECT_SOLVER_CAP = 4096


@dataclass
class GradObservations:
    """Observed values (and optionally gradients) at n input points."""

    X: np.ndarray
    y: np.ndarray
    G: Optional[np.ndarray] = None
    noise: tuple = (1e-8, 1e-8)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.G is not None:
            self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        n, d = self.X.shape
        if n < 1:
            raise DimensionMismatch("need at least one observation")
        if len(self.y) != n:
            raise DimensionMismatch(f"{len(self.y)} values for {n} points")
        if self.G is not None and self.G.shape != (n, d):
            raise DimensionMismatch(f"gradient array must be {(n, d)}, got {self.G.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("observations must be finite")
        if self.G is not None and not np.all(np.isfinite(self.G)):
            raise ValueError("observations must be finite")

    @property
    def has_gradients(self):
        return self.G is not None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def rhs(self):
        if self.G is None:
            return self.y.copy()
        return np.concatenate([self.y, self.G.ravel()])


@dataclass
class Posterior:
    kernel: object
    obs: GradObservations
    alpha: np.ndarray
    report: SolveReport
    solver: str
    tol: float
    warnings_log: list = field(default_factory=list)
    _chol: Optional[np.ndarray] = None
    _operator: Optional[LazyBlockMatrix] = None
    _shift: Optional[np.ndarray] = None


def train_operator(kernel, obs: GradObservations) -> LazyBlockMatrix:
    orders = (0, 1) if obs.has_gradients else (0,)
    return LazyBlockMatrix(kernel, obs.X, orders=orders)


def dense_train_matrix(kernel, obs: GradObservations) -> np.ndarray:
    """Training covariance assembled row-block-wise by the batch rules."""
    n, d = obs.n, obs.d
    if not obs.has_gradients:
        K = np.empty((n, n))
        for i in range(n):
            K[i], _, _ = batch.pair_stats(kernel, obs.X[i], obs.X)
        return 0.5 * (K + K.T)
    dim = n * (1 + d)
    K = np.empty((dim, dim))
    for i in range(n):
        vals, GX, GY = batch.pair_stats(kernel, obs.X[i], obs.X)
        blocks = batch.gblock_rows(kernel, obs.X[i], obs.X)
        K[i, :n] = vals
        K[i, n:] = GY.ravel()
        rows = slice(n + i * d, n + (i + 1) * d)
        K[rows, :n] = GX.T
        K[rows, n:] = blocks.transpose(1, 0, 2).reshape(d, n * d)
    return 0.5 * (K + K.T)


def fit(
    kernel,
    obs: GradObservations,
    tol: float = 1e-8,
    max_iter: Optional[int] = None,
    solver: str = "cg",
    on_fail: str = "raise",
) -> Posterior:
    """Condition the zero-mean prior on the observations.

    ``solver="cg"`` runs matrix-free conjugate gradients on the lazy
    operator; ``solver="direct"`` factorizes the densely assembled system
    (refused above ``DIRECT_SOLVER_CAP`` unknowns).
    """
    rhs = obs.rhs()
    shift = noise_vector(obs.n, obs.d, obs.noise, (0, 1) if obs.has_gradients else (0,))
    post = Posterior(kernel, obs, np.zeros_like(rhs), SolveReport(0, 0.0, True), solver, tol)
    if solver == "direct":
        dim = len(rhs)
        if dim > DIRECT_SOLVER_CAP:
            raise ValueError(
                f"direct solver refused for {dim} unknowns (cap {DIRECT_SOLVER_CAP})"
            )
        K = dense_train_matrix(kernel, obs)
        K[np.arange(dim), np.arange(dim)] += shift
        chol = scipy.linalg.cho_factor(K, lower=True)
        alpha = scipy.linalg.cho_solve(chol, rhs)
        resid = float(np.linalg.norm(K @ alpha - rhs))
        post.alpha = alpha
        post.report = SolveReport(0, resid, True)
        post._chol = chol
        post._shift = shift
        return post
    if solver != "cg":
        raise ValueError(f"unknown solver {solver!r}")
    M = train_operator(kernel, obs)
    alpha, report = cg_solve(M, shift, rhs, tol=tol, max_iter=max_iter)
    if not report.converged:
        msg = (
            f"training solve stopped at residual {report.final_residual:.3e} "
            f"after {report.iterations} iterations"
        )
        if on_fail == "raise":
            raise NotConverged(msg)
        post.warnings_log.append(msg)
        warnings.warn(msg)
    post.alpha = alpha
    post.report = report
    post._operator = M
    post._shift = shift
    return post


def _check_query(post, x):
    x = np.asarray(x, dtype=float).ravel()
    if len(x) != post.obs.d:
        raise DimensionMismatch(f"query dimension {len(x)} != {post.obs.d}")
    return x


def cross_covariance(post, x) -> np.ndarray:
    """Covariance of f(x) with every observed quantity."""
    vals, _, GY = batch.pair_stats(post.kernel, x, post.obs.X)
    if not post.obs.has_gradients:
        return vals
    return np.concatenate([vals, GY.ravel()])


def predict_mean(post: Posterior, x) -> float:
    x = _check_query(post, x)
    return float(cross_covariance(post, x) @ post.alpha)


def predict_mean_grad(post: Posterior, x) -> np.ndarray:
    x = _check_query(post, x)
    n, d = post.obs.n, post.obs.d
    _, GX, _ = batch.pair_stats(post.kernel, x, post.obs.X)
    out = GX.T @ post.alpha[:n]
    if post.obs.has_gradients:
        W = post.alpha[n:].reshape(n, d)
        out = out + batch.gblock_apply_rows(post.kernel, x, post.obs.X, W).sum(axis=0)
    return out


def _solve_train_system(post: Posterior, b, tol):
    if post._chol is not None:
        return scipy.linalg.cho_solve(post._chol, b), SolveReport(0, 0.0, True)
    x, report = cg_solve(post._operator, post._shift, b, tol=tol)
    if not report.converged:
        raise NotConverged(
            f"variance solve stopped at residual {report.final_residual:.3e}"
        )
    return x, report


def predict_var(post: Posterior, x, tol: float = 1e-8) -> float:
    """Posterior variance of the latent value at x (noise not added)."""
    x = _check_query(post, x)
    prior = evaluate(post.kernel, x, x)
    if post.obs.n == 0:
        return prior
    ks = cross_covariance(post, x)
    u, _ = _solve_train_system(post, ks, tol)
    var = prior - float(ks @ u)
    if var < -1e-8:
        warnings.warn(f"variance clamped from {var:.3e} to 0")
    return max(var, 0.0)
