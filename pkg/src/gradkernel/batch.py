"""Vectorized per-pair kernel quantities for one query against many points.

The recursive rules mirror the per-pair structured engine exactly, but
operate on (m, d) arrays so Gaussian-process prediction and dense training
assembly stay fast at interactive scale.  Node kinds without a vectorized
rule fall back to the per-pair engine transparently; equality with the
scalar path is property-tested.
"""

from __future__ import annotations

import numpy as np

from . import gradblocks, kernels


def pair_stats(k, x, Y):
    """Values and both gradients of k(x, y_j) for every row y_j of Y.

    Returns ``(vals (m,), GX (m, d), GY (m, d))``.
    """
    x = np.asarray(x, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return _stats(k, x, Y)


def gblock_apply_rows(k, x, Y, W):
    """Per-pair products of the mixed-partial block with rows of W.

    Row j of the result is the d x d block at (x, y_j) applied to W[j].
    """
    x = np.asarray(x, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return _apply(k, x, Y, W)


def gblock_rows(k, x, Y):
    """Dense per-pair mixed-partial blocks, shape (m, d, d)."""
    x = np.asarray(x, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return _mats(k, x, Y)


def diag_values(k, X):
    """k(x_i, x_i) for every row, vectorized."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _diag(k, X)


def _diag(k, X):
    q = X.shape[0]
    if isinstance(k, kernels.Primitive):
        if k.proto == kernels.ISO:
            s = np.zeros(q)
        elif k.proto == kernels.DOT:
            s = np.einsum("qd,qd->q", X, X)
        else:
            s = np.zeros(q)
        return np.asarray(k.fn.derivs(s, 0)[0], dtype=float)
    if isinstance(k, kernels.Chain):
        return np.asarray(k.fn.derivs(_diag(k.inner, X), 0)[0], dtype=float)
    if isinstance(k, kernels.Sum):
        return np.sum([_diag(c, X) for c in k.children], axis=0)
    if isinstance(k, kernels.Product):
        return np.prod([_diag(c, X) for c in k.children], axis=0)
    if isinstance(k, kernels.VerticalScale):
        f = np.array([k.field.value(u) for u in X])
        return f * f * _diag(k.inner, X)
    if isinstance(k, kernels.Warp) and k.warp.is_linear:
        return _diag(k.inner, X @ k.warp.linear_matrix().T)
    if isinstance(k, kernels.Scale):
        return k.a * _diag(k.inner, X)
    from .kernels import evaluate

    return np.array([evaluate(k, u, u) for u in X])


def _loop_stats(k, x, Y):
    out_v = np.empty(len(Y))
    out_gx = np.empty_like(Y)
    out_gy = np.empty_like(Y)
    for j, y in enumerate(Y):
        _, pair = gradblocks.gradient_block(k, x, y)
        out_v[j] = pair.value
        out_gx[j] = pair.gx
        out_gy[j] = pair.gy
    return out_v, out_gx, out_gy


def _proto_stats(k, x, Y):
    if k.proto == kernels.ISO:
        R = x[None, :] - Y
        s = np.einsum("md,md->m", R, R)
        return s, 2.0 * R, -2.0 * R
    if k.proto == kernels.DOT:
        s = Y @ x
        return s, Y.copy(), np.broadcast_to(x, Y.shape).copy()
    c = k.c_vec()
    R = x[None, :] - Y
    s = R @ c
    m = len(Y)
    return s, np.broadcast_to(c, Y.shape).copy(), np.broadcast_to(-c, Y.shape).copy()


def _stats(k, x, Y):
    if isinstance(k, kernels.Primitive):
        s, px, py = _proto_stats(k, x, Y)
        f0, f1 = k.fn.derivs(s, 1)
        return np.asarray(f0, float), f1[:, None] * px, f1[:, None] * py
    if isinstance(k, kernels.Chain):
        g, gx, gy = _stats(k.inner, x, Y)
        f0, f1 = k.fn.derivs(g, 1)
        return np.asarray(f0, float), f1[:, None] * gx, f1[:, None] * gy
    if isinstance(k, kernels.Sum):
        parts = [_stats(c, x, Y) for c in k.children]
        return (
            np.sum([p[0] for p in parts], axis=0),
            np.sum([p[1] for p in parts], axis=0),
            np.sum([p[2] for p in parts], axis=0),
        )
    if isinstance(k, kernels.Product):
        parts = [_stats(c, x, Y) for c in k.children]
        vals = np.array([p[0] for p in parts])       # (r, m)
        p_i = _loo_rows(vals)                        # (r, m)
        gx = sum(p[1] * w[:, None] for p, w in zip(parts, p_i))
        gy = sum(p[2] * w[:, None] for p, w in zip(parts, p_i))
        return np.prod(vals, axis=0), gx, gy
    if isinstance(k, kernels.VerticalScale):
        fx = k.field.value(x)
        gfx = k.field.grad(x)
        fy = np.array([k.field.value(y) for y in Y])
        gfy = np.array([k.field.grad(y) for y in Y])
        h, gxh, gyh = _stats(k.inner, x, Y)
        vals = fx * h * fy
        gx = np.multiply.outer(h * fy, gfx) + (fx * fy)[:, None] * gxh
        gy = (fx * fy)[:, None] * gyh + (fx * h)[:, None] * gfy
        return vals, gx, gy
    if isinstance(k, kernels.Warp) and k.warp.is_linear:
        U = k.warp.linear_matrix()
        h, gxh, gyh = _stats(k.inner, U @ x, Y @ U.T)
        return h, gxh @ U, gyh @ U
    if isinstance(k, kernels.Scale):
        h, gx, gy = _stats(k.inner, x, Y)
        return k.a * h, k.a * gx, k.a * gy
    return _loop_stats(k, x, Y)


def _loo_rows(vals):
    """Leave-one-out products along the first axis, zero-safe."""
    r = vals.shape[0]
    pre = np.ones((r + 1,) + vals.shape[1:])
    suf = np.ones((r + 1,) + vals.shape[1:])
    for i in range(r):
        pre[i + 1] = pre[i] * vals[i]
        suf[r - 1 - i] = suf[r - i] * vals[r - 1 - i]
    return pre[:r] * suf[1:]


def pair_stats_multi(k, Xq, Y):
    """Values and gradients for every (query, support) pair at once.

    Returns ``(vals (q, m), GX (q, m, d), GY (q, m, d))``; the rules mirror
    ``pair_stats`` with one extra leading axis.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return _stats_multi(k, Xq, Y)


def _stats_multi(k, Xq, Y):
    q, d = Xq.shape
    m = Y.shape[0]
    if isinstance(k, kernels.Primitive):
        if k.proto == kernels.ISO:
            R = Xq[:, None, :] - Y[None, :, :]
            s = np.einsum("qmd,qmd->qm", R, R)
            f0, f1 = k.fn.derivs(s, 1)
            return f0, 2.0 * f1[..., None] * R, -2.0 * f1[..., None] * R
        if k.proto == kernels.DOT:
            s = Xq @ Y.T
            f0, f1 = k.fn.derivs(s, 1)
            return (
                f0,
                f1[..., None] * Y[None, :, :],
                f1[..., None] * Xq[:, None, :],
            )
        c = k.c_vec()
        s = (Xq @ c)[:, None] - (Y @ c)[None, :]
        f0, f1 = k.fn.derivs(s, 1)
        return f0, f1[..., None] * c, -f1[..., None] * c
    if isinstance(k, kernels.Chain):
        g, gx, gy = _stats_multi(k.inner, Xq, Y)
        f0, f1 = k.fn.derivs(g, 1)
        return f0, f1[..., None] * gx, f1[..., None] * gy
    if isinstance(k, kernels.Sum):
        parts = [_stats_multi(c, Xq, Y) for c in k.children]
        return (
            np.sum([p[0] for p in parts], axis=0),
            np.sum([p[1] for p in parts], axis=0),
            np.sum([p[2] for p in parts], axis=0),
        )
    if isinstance(k, kernels.Product):
        parts = [_stats_multi(c, Xq, Y) for c in k.children]
        vals = np.array([p[0] for p in parts])
        p_i = _loo_rows(vals)
        gx = sum(p[1] * w[..., None] for p, w in zip(parts, p_i))
        gy = sum(p[2] * w[..., None] for p, w in zip(parts, p_i))
        return np.prod(vals, axis=0), gx, gy
    if isinstance(k, kernels.VerticalScale):
        fx = np.array([k.field.value(u) for u in Xq])
        gfx = np.array([k.field.grad(u) for u in Xq])
        fy = np.array([k.field.value(v) for v in Y])
        gfy = np.array([k.field.grad(v) for v in Y])
        h, gxh, gyh = _stats_multi(k.inner, Xq, Y)
        ff = fx[:, None] * fy[None, :]
        vals = ff * h
        gx = (h * fy[None, :])[..., None] * gfx[:, None, :] + ff[..., None] * gxh
        gy = ff[..., None] * gyh + (h * fx[:, None])[..., None] * gfy[None, :, :]
        return vals, gx, gy
    if isinstance(k, kernels.Warp) and k.warp.is_linear:
        U = k.warp.linear_matrix()
        h, gxh, gyh = _stats_multi(k.inner, Xq @ U.T, Y @ U.T)
        return h, gxh @ U, gyh @ U
    if isinstance(k, kernels.Scale):
        h, gx, gy = _stats_multi(k.inner, Xq, Y)
        return k.a * h, k.a * gx, k.a * gy
    vals = np.empty((q, m))
    GX = np.empty((q, m, d))
    GY = np.empty((q, m, d))
    for i in range(q):
        vals[i], GX[i], GY[i] = _stats(k, Xq[i], Y)
    return vals, GX, GY


def _apply(k, x, Y, W):
    if isinstance(k, kernels.Primitive):
        s, px, py = _proto_stats(k, x, Y)
        f0, f1, f2 = k.fn.derivs(s, 2)
        if k.proto == kernels.ISO:
            R = x[None, :] - Y
            rw = np.einsum("md,md->m", R, W)
            return -2.0 * f1[:, None] * W - 4.0 * (f2 * rw)[:, None] * R
        if k.proto == kernels.DOT:
            xw = W @ x
            return f1[:, None] * W + (f2 * xw)[:, None] * Y
        c = k.c_vec()
        cw = W @ c
        return np.multiply.outer(-f2 * cw, c)
    if isinstance(k, kernels.Chain):
        g, gx, gy = _stats(k.inner, x, Y)
        f0, f1, f2 = k.fn.derivs(g, 2)
        inner = _apply(k.inner, x, Y, W)
        gyw = np.einsum("md,md->m", gy, W)
        return f1[:, None] * inner + (f2 * gyw)[:, None] * gx
    if isinstance(k, kernels.Sum):
        return sum(_apply(c, x, Y, W) for c in k.children)
    if isinstance(k, kernels.Product):
        parts = [_stats(c, x, Y) for c in k.children]
        vals = np.array([p[0] for p in parts])
        p_i = _loo_rows(vals)
        out = sum(
            p_i[i][:, None] * _apply(c, x, Y, W) for i, c in enumerate(k.children)
        )
        r = len(parts)
        gyw = np.array([np.einsum("md,md->m", parts[i][2], W) for i in range(r)])  # (r, m)
        for i in range(r):
            coef = np.zeros(len(Y))
            for l in range(r):
                if l == i:
                    continue
                coef += _loo2_rows(vals, i, l) * gyw[l]
            out += coef[:, None] * parts[i][1]
        return out
    if isinstance(k, kernels.VerticalScale):
        fx = k.field.value(x)
        gfx = k.field.grad(x)
        fy = np.array([k.field.value(y) for y in Y])
        gfy = np.array([k.field.grad(y) for y in Y])
        h, gxh, gyh = _stats(k.inner, x, Y)
        inner = _apply(k.inner, x, Y, W)
        gfyw = np.einsum("md,md->m", gfy, W)
        gyhw = np.einsum("md,md->m", gyh, W)
        out = (fx * fy)[:, None] * inner
        out += np.multiply.outer(h * gfyw + fy * gyhw, gfx)
        out += (fx * gfyw)[:, None] * gxh
        return out
    if isinstance(k, kernels.Warp) and k.warp.is_linear:
        U = k.warp.linear_matrix()
        return _apply(k.inner, U @ x, Y @ U.T, W @ U.T) @ U
    if isinstance(k, kernels.Scale):
        return k.a * _apply(k.inner, x, Y, W)
    out = np.empty_like(W)
    for j, y in enumerate(Y):
        block, _ = gradblocks.gradient_block(k, x, y)
        out[j] = block.apply(W[j])
    return out


def _loo2_rows(vals, i, l):
    """Products over all factors except i and l, per column."""
    r, m = vals.shape
    out = np.ones(m)
    for t in range(r):
        if t != i and t != l:
            out = out * vals[t]
    return out


def _mats(k, x, Y):
    m, d = Y.shape
    eye = np.eye(d)
    if isinstance(k, kernels.Primitive):
        s, px, py = _proto_stats(k, x, Y)
        f0, f1, f2 = k.fn.derivs(s, 2)
        if k.proto == kernels.ISO:
            R = x[None, :] - Y
            return -2.0 * f1[:, None, None] * eye - 4.0 * f2[:, None, None] * np.einsum(
                "ma,mb->mab", R, R
            )
        if k.proto == kernels.DOT:
            return f1[:, None, None] * eye + f2[:, None, None] * np.einsum(
                "ma,b->mab", Y, x
            )
        c = k.c_vec()
        return -f2[:, None, None] * np.multiply.outer(np.ones(m), np.multiply.outer(c, c))
    if isinstance(k, kernels.Chain):
        g, gx, gy = _stats(k.inner, x, Y)
        f0, f1, f2 = k.fn.derivs(g, 2)
        return f1[:, None, None] * _mats(k.inner, x, Y) + f2[:, None, None] * np.einsum(
            "ma,mb->mab", gx, gy
        )
    if isinstance(k, kernels.Sum):
        return sum(_mats(c, x, Y) for c in k.children)
    if isinstance(k, kernels.Product):
        parts = [_stats(c, x, Y) for c in k.children]
        vals = np.array([p[0] for p in parts])
        p_i = _loo_rows(vals)
        out = sum(
            p_i[i][:, None, None] * _mats(c, x, Y) for i, c in enumerate(k.children)
        )
        r = len(parts)
        for i in range(r):
            for l in range(r):
                if l == i:
                    continue
                P_il = _loo2_rows(vals, i, l)
                out += P_il[:, None, None] * np.einsum("ma,mb->mab", parts[i][1], parts[l][2])
        return out
    if isinstance(k, kernels.VerticalScale):
        fx = k.field.value(x)
        gfx = k.field.grad(x)
        fy = np.array([k.field.value(y) for y in Y])
        gfy = np.array([k.field.grad(y) for y in Y])
        h, gxh, gyh = _stats(k.inner, x, Y)
        out = (fx * fy)[:, None, None] * _mats(k.inner, x, Y)
        out += h[:, None, None] * np.einsum("a,mb->mab", gfx, gfy)
        out += fy[:, None, None] * np.einsum("a,mb->mab", gfx, gyh)
        out += fx * np.einsum("ma,mb->mab", gxh, gfy)
        return out
    if isinstance(k, kernels.Warp) and k.warp.is_linear:
        U = k.warp.linear_matrix()
        inner = _mats(k.inner, U @ x, Y @ U.T)
        return np.einsum("pa,mpq,qb->mab", U, inner, U)
    if isinstance(k, kernels.Scale):
        return k.a * _mats(k.inner, x, Y)
    out = np.empty((m, d, d))
    for j, y in enumerate(Y):
        block, _ = gradblocks.gradient_block(k, x, y)
        out[j] = block.materialize()
    return out
