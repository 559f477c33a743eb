"""Lazy block kernel matrices and matrix-free solves.

The joint covariance of values, gradients, and (optionally) second
derivatives at n points is an n x n grid of structured blocks.  Blocks are
produced on demand during a matrix-vector product and dropped immediately,
so peak working memory is one block plus the output vector regardless of n.

Layout is derivative-order-major: all value entries first, then all
gradient entries (point-major within the section), then second-derivative
entries.  ``point_major_permutation`` converts to the interleaved order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gradblocks, hessblocks, kernels
from .counters import add_mults
from .errors import DimensionMismatch, NotPSD

MATERIALIZE_CAP = 4096


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool


def _order_sizes(n, d, orders):
    sizes = {0: 1, 1: d, 2: d * d}
    return [n * sizes[o] for o in orders]


class LazyBlockMatrix:
    """Symmetric covariance operator over value/derivative observations.

    ``orders`` selects which derivative sections are present: 0 for values,
    1 for gradients, 2 for vec'd second derivatives.
    """

    def __init__(self, kernel, X, orders=(0, 1)):
        self.kernel = kernel
        self.X = np.ascontiguousarray(X, dtype=float)
        if self.X.ndim != 2:
            raise DimensionMismatch("X must be (n, d)")
        self.n, self.d = self.X.shape
        self.orders = tuple(sorted(set(int(o) for o in orders)))
        if not self.orders or any(o not in (0, 1, 2) for o in self.orders):
            raise ValueError(f"orders must be a nonempty subset of (0, 1, 2), got {orders}")
        sizes = _order_sizes(self.n, self.d, self.orders)
        self.section_offsets = dict(
            zip(self.orders, np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int))
        )
        self.total_dim = int(sum(sizes))
        self._entry = {0: 1, 1: self.d, 2: self.d * self.d}

    # -- indexing helpers ---------------------------------------------------

    def _seg(self, order, i):
        w = self._entry[order]
        at = self.section_offsets[order] + i * w
        return slice(at, at + w)

    # -- block provider -----------------------------------------------------

    def block(self, i, j, order_pair):
        """The (i, j) block coupling the two derivative orders.

        Returns a float for (0,0), vectors for value/derivative couplings,
        and structured operators for (1,1), (2,1), (2,2).  (1,2) and (0,2)
        are the transposes of the swapped-argument (2,1) and (2,0) blocks;
        they are returned as objects with the apply orientation documented
        below.
        """
        oi, oj = order_pair
        xi, xj = self.X[i], self.X[j]
        if (oi, oj) == (0, 0):
            return kernels.evaluate(self.kernel, xi, xj)
        if (oi, oj) in ((0, 1), (1, 0), (1, 1)):
            block, pair = gradblocks.gradient_block(self.kernel, xi, xj)
            if (oi, oj) == (0, 1):
                return pair.gy
            if (oi, oj) == (1, 0):
                return pair.gx
            return block
        hb = hessblocks.hessian_blocks(self.kernel, xi, xj)
        if (oi, oj) == (2, 0):
            return hb.hx
        if (oi, oj) == (2, 1):
            return hb.hessgrad
        if (oi, oj) == (2, 2):
            return hb.hesshess
        if (oi, oj) == (0, 2):
            # row vector: transpose of the (2, 0) block at (j, i)
            return hessblocks.hessian_blocks(self.kernel, xj, xi).hx
        if (oi, oj) == (1, 2):
            # apply via .rmatvec of the swapped cross operator
            return hessblocks.hessian_blocks(self.kernel, xj, xi).hessgrad
        raise ValueError(f"unknown order pair {order_pair}")

    # -- matrix-vector product ----------------------------------------------

    def mvm(self, v, out=None, threads=None):
        """Exact product with the full block matrix.

        Serial by default (deterministic).  ``threads > 1`` fans block rows
        out to a pool; each row is still accumulated in column order, so the
        result is reproducible either way.
        """
        v = np.asarray(v, dtype=float)
        if v.shape != (self.total_dim,):
            raise DimensionMismatch(f"expected length {self.total_dim}, got {v.shape}")
        if out is None:
            out = np.zeros(self.total_dim)
        else:
            out[:] = 0.0
        factored = self._warp_factored_mvm(v, out)
        if factored is not None:
            return factored
        threads = threads or _env_threads()
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda i: self._row_mvm(i, v, out), range(self.n)))
        else:
            for i in range(self.n):
                self._row_mvm(i, v, out)
        return out

    def _row_mvm(self, i, v, out):
        has0 = 0 in self.orders
        has1 = 1 in self.orders
        has2 = 2 in self.orders
        xi = self.X[i]
        for j in range(self.n):
            xj = self.X[j]
            if has1:
                block, pair = gradblocks.gradient_block(self.kernel, xi, xj)
                if has0:
                    add_mults(1 + 2 * self.d)
                    out[self._seg(0, i)] += pair.value * v[self._seg(0, j)]
                    out[self._seg(0, i)] += pair.gy @ v[self._seg(1, j)]
                    out[self._seg(1, i)] += pair.gx * v[self._seg(0, j)][0]
                out[self._seg(1, i)] += block.apply(v[self._seg(1, j)])
            elif has0:
                add_mults(1)
                out[self._seg(0, i)] += kernels.evaluate(self.kernel, xi, xj) * v[self._seg(0, j)]
            if has2:
                hb = hessblocks.hessian_blocks(self.kernel, xi, xj)
                d2 = self.d * self.d
                out[self._seg(2, i)] += hb.hesshess.apply(v[self._seg(2, j)])
                if has0:
                    add_mults(2 * d2)
                    out[self._seg(2, i)] += hb.hx * v[self._seg(0, j)][0]
                    # value-vs-second-derivative block at (j, i)
                    out[self._seg(0, j)] += hb.hx @ v[self._seg(2, i)]
                if has1:
                    out[self._seg(2, i)] += hb.hessgrad.apply(v[self._seg(1, j)])
                    # gradient-vs-second-derivative block at (j, i)
                    out[self._seg(1, j)] += hb.hessgrad.rmatvec(v[self._seg(2, i)])

    def _warp_factored_mvm(self, v, out):
        """Pull per-point Jacobians out of a warped kernel before the MVM.

        Applies when the root is a (possibly scaled) warp and only values
        and gradients are present; the inner product then runs in the warped
        space, whose dimension may be much smaller.
        """
        if 2 in self.orders or 1 not in self.orders:
            return None
        scale = 1.0
        k = self.kernel
        while isinstance(k, kernels.Scale):
            scale *= k.a
            k = k.inner
        if not isinstance(k, kernels.Warp):
            return None
        warp = k.warp
        r = warp.dim_out
        UX = np.array([warp(x) for x in self.X])
        inner = LazyBlockMatrix(k.inner, UX, self.orders)
        w = np.empty(inner.total_dim)
        has0 = 0 in self.orders
        if has0:
            w[inner._seg_section(0)] = v[self._seg_section(0)]
        for j in range(self.n):
            vj = v[self._seg(1, j)]
            if warp.diag is not None:
                add_mults(self.d)
                w[inner._seg(1, j)] = warp.diag * vj
            else:
                add_mults(r * self.d)
                w[inner._seg(1, j)] = warp.jacobian(self.X[j]) @ vj
        z = inner.mvm(w)
        if has0:
            out[self._seg_section(0)] += z[inner._seg_section(0)]
        for i in range(self.n):
            zi = z[inner._seg(1, i)]
            if warp.diag is not None:
                add_mults(self.d)
                out[self._seg(1, i)] += warp.diag * zi
            else:
                add_mults(r * self.d)
                out[self._seg(1, i)] += warp.jacobian(self.X[i]).T @ zi
        if scale != 1.0:
            add_mults(self.total_dim)
            out *= scale
        return out

    def _seg_section(self, order):
        at = self.section_offsets[order]
        return slice(at, at + self.n * self._entry[order])

    # -- dense path -----------------------------------------------------------

    def materialize(self, force=False):
        """Dense matrix via the block provider; oracle support only."""
        if self.total_dim > MATERIALIZE_CAP and not force:
            raise ValueError(
                f"refusing to materialize a {self.total_dim}-dim operator "
                f"(cap {MATERIALIZE_CAP}); pass force=True to override"
            )
        M = np.zeros((self.total_dim, self.total_dim))
        for i in range(self.n):
            for j in range(self.n):
                for oi in self.orders:
                    for oj in self.orders:
                        blk = self.block(i, j, (oi, oj))
                        M[self._seg(oi, i), self._seg(oj, j)] = _dense_block(
                            blk, (oi, oj), self.d
                        )
        return M


def _dense_block(blk, order_pair, d):
    oi, oj = order_pair
    if (oi, oj) == (0, 0):
        return blk
    if oi == 0:
        return np.asarray(blk).reshape(1, -1)
    if oj == 0:
        return np.asarray(blk).reshape(-1, 1)
    if (oi, oj) == (1, 2):
        # stored as the swapped cross operator; transpose into place
        return blk.materialize().T
    return blk.materialize()


def _env_threads():
    try:
        return max(1, int(os.environ.get("GRADKERNEL_THREADS", "1")))
    except ValueError:
        return 1


def noise_vector(n, d, noise, orders=(0, 1)):
    """Per-entry jitter: one level for values, another for derivatives."""
    sv, sg = noise
    parts = []
    for o in sorted(set(orders)):
        size = {0: 1, 1: d, 2: d * d}[o]
        parts.append(np.full(n * size, sv if o == 0 else sg))
    return np.concatenate(parts)


def point_major_permutation(n, d, orders=(0, 1)):
    """Index array mapping order-major storage to point-major interleaving.

    ``v_point_major = v_order_major[perm]``: point j contributes its value,
    then its d gradient entries (then d^2 second-derivative entries).
    """
    orders = tuple(sorted(set(orders)))
    sizes = {0: 1, 1: d, 2: d * d}
    offsets = {}
    at = 0
    for o in orders:
        offsets[o] = at
        at += n * sizes[o]
    perm = []
    for j in range(n):
        for o in orders:
            w = sizes[o]
            perm.extend(range(offsets[o] + j * w, offsets[o] + (j + 1) * w))
    return np.array(perm, dtype=int)


# --- conjugate gradients -----------------------------------------------------

def cg_solve(M, shift, b, tol=1e-8, max_iter=None, preconditioner=None):
    """Solve (M + diag(shift)) x = b by (preconditioned) conjugate gradients.

    ``shift`` is a scalar or a per-entry vector.  Returns the best iterate
    and a report; callers decide whether non-convergence is fatal.
    """
    b = np.asarray(b, dtype=float)
    dim = M.total_dim
    if b.shape != (dim,):
        raise DimensionMismatch(f"rhs length {b.shape} != {dim}")
    shift = np.asarray(shift, dtype=float)
    if max_iter is None:
        max_iter = 10 * dim
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(dim), SolveReport(0, 0.0, True)

    def A(v):
        return M.mvm(v) + shift * v

    pre = preconditioner if preconditioner is not None else lambda r: r
    x = np.zeros(dim)
    r = b.copy()
    z = pre(r)
    p = z.copy()
    rz = float(r @ z)
    best_x, best_res = x.copy(), float(np.linalg.norm(r))
    it = 0
    for it in range(1, max_iter + 1):
        Ap = A(p)
        den = float(p @ Ap)
        if den <= 0:
            break
        alpha = rz / den
        x = x + alpha * p
        r = r - alpha * Ap
        res = float(np.linalg.norm(r))
        if res < best_res:
            best_res, best_x = res, x.copy()
        if res <= tol * b_norm:
            return x, SolveReport(it, res, True)
        z = pre(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, SolveReport(it, best_res, best_res <= tol * b_norm)


def block_diagonal_preconditioner(M: LazyBlockMatrix, shift):
    """Per-point block-diagonal inverse, built once from the diagonal blocks."""
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (M.total_dim,))
    factors = []
    index_sets = []
    for j in range(M.n):
        idx = np.concatenate([np.arange(M.total_dim)[M._seg(o, j)] for o in M.orders])
        blk = np.zeros((len(idx), len(idx)))
        at_i = 0
        for oi in M.orders:
            wi = M._entry[oi]
            at_j = 0
            for oj in M.orders:
                wj = M._entry[oj]
                blk[at_i : at_i + wi, at_j : at_j + wj] = _dense_block(
                    M.block(j, j, (oi, oj)), (oi, oj), M.d
                )
                at_j += wj
            at_i += wi
        blk[np.arange(len(idx)), np.arange(len(idx))] += shift[idx]
        np.linalg.cholesky(blk)  # PSD check; inverse is small enough to store
        factors.append(np.linalg.inv(blk))
        index_sets.append(idx)

    def apply(r):
        out = np.empty_like(r)
        for idx, inv in zip(index_sets, factors):
            out[idx] = inv @ r[idx]
        return out

    return apply


# --- pivoted Cholesky ----------------------------------------------------------

def pivoted_cholesky(E, tol=1e-12):
    """Rank-revealing factor U (r x d) with E ~= U^T U for a PSD matrix.

    Stops when the largest remaining diagonal falls below ``tol``; raises
    if a pivot is more negative than ``-tol``.
    """
    E = np.asarray(E, dtype=float)
    d = E.shape[0]
    if E.shape != (d, d):
        raise DimensionMismatch("matrix must be square")
    diag = np.array(np.diag(E), dtype=float)
    perm = np.arange(d)
    U = np.zeros((d, d))
    rank = 0
    for j in range(d):
        p = j + int(np.argmax(diag[perm[j:]]))
        pivot = diag[perm[p]]
        if pivot < -tol:
            raise NotPSD(f"pivot {pivot} below -{tol}")
        if pivot <= tol:
            break
        perm[[j, p]] = perm[[p, j]]
        pj = perm[j]
        root = np.sqrt(pivot)
        U[j, pj] = root
        rest = perm[j + 1 :]
        if len(rest):
            row = (E[pj, rest] - U[:j, pj] @ U[:j, rest]) / root
            U[j, rest] = row
            diag[rest] -= row * row
        diag[pj] = 0.0
        rank += 1
    return U[:rank]
