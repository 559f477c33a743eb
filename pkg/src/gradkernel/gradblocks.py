"""Data-sparse representations of the mixed-partial kernel block.

For a kernel k, the d x d block of mixed partials d^2 k / dx_i dy_j is
derived recursively over the kernel graph.  Every rule produces one of a
small set of operator shapes -- scaled identity or diagonal plus a low-rank
correction, a Jacobian sandwich, a sum of blocks, or a dense fallback -- so
a matrix-vector product costs O(d r) scalar multiplies instead of O(d^2).

Each derivation also returns the kernel value and both gradients, which
parent product/chain rules consume.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .counters import add_mults
from .errors import DimensionMismatch, DomainError, NonDifferentiable

MAX_RANK = 8


@dataclass
class GradPair:
    """Kernel value and gradients with respect to each argument."""

    value: float
    gx: np.ndarray
    gy: np.ndarray

    def scaled(self, a: float) -> "GradPair":
        return GradPair(a * self.value, a * self.gx, a * self.gy)


class GradientBlock:
    """Linear operator for the d x d mixed-partial block."""

    d: int

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """Transpose apply."""
        raise NotImplementedError

    def scaled(self, a: float) -> "GradientBlock":
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        """Dense matrix, via application to the canonical basis."""
        out = np.empty((self.d, self.d))
        e = np.zeros(self.d)
        for j in range(self.d):
            e[j] = 1.0
            out[:, j] = self.apply(e)
            e[j] = 0.0
        return out

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d,):
            raise DimensionMismatch(f"expected vector of length {self.d}, got {v.shape}")
        return v


def _empty_lr(d: int):
    return np.zeros((d, 0)), np.zeros((0, 0)), np.zeros((d, 0))


class ScaledIdentityPlusLowRank(GradientBlock):
    """alpha * I + U C V^T with small rank."""

    __slots__ = ("d", "alpha", "U", "C", "V")

    def __init__(self, d, alpha, U=None, C=None, V=None):
        self.d = int(d)
        self.alpha = float(alpha)
        if U is None:
            U, C, V = _empty_lr(self.d)
        self.U = np.ascontiguousarray(U, dtype=float)
        self.C = np.ascontiguousarray(C, dtype=float)
        self.V = np.ascontiguousarray(V, dtype=float)

    @property
    def rank(self):
        return self.U.shape[1]

    def apply(self, v):
        v = self._check(v)
        r = self.rank
        add_mults(self.d + 2 * self.d * r + r * r)
        out = self.alpha * v
        if r:
            out = out + self.U @ (self.C @ (self.V.T @ v))
        return out

    def rmatvec(self, v):
        v = self._check(v)
        r = self.rank
        add_mults(self.d + 2 * self.d * r + r * r)
        out = self.alpha * v
        if r:
            out = out + self.V @ (self.C.T @ (self.U.T @ v))
        return out

    def scaled(self, a):
        return ScaledIdentityPlusLowRank(self.d, a * self.alpha, self.U, a * self.C, self.V)

    def materialize(self):
        return self.alpha * np.eye(self.d) + self.U @ self.C @ self.V.T


class DiagonalPlusLowRank(GradientBlock):
    """diag(w) + U C V^T."""

    __slots__ = ("d", "diag", "U", "C", "V")

    def __init__(self, diag, U=None, C=None, V=None):
        self.diag = np.asarray(diag, dtype=float)
        self.d = len(self.diag)
        if U is None:
            U, C, V = _empty_lr(self.d)
        self.U = np.ascontiguousarray(U, dtype=float)
        self.C = np.ascontiguousarray(C, dtype=float)
        self.V = np.ascontiguousarray(V, dtype=float)

    @property
    def rank(self):
        return self.U.shape[1]

    def apply(self, v):
        v = self._check(v)
        r = self.rank
        add_mults(self.d + 2 * self.d * r + r * r)
        out = self.diag * v
        if r:
            out = out + self.U @ (self.C @ (self.V.T @ v))
        return out

    def rmatvec(self, v):
        v = self._check(v)
        r = self.rank
        add_mults(self.d + 2 * self.d * r + r * r)
        out = self.diag * v
        if r:
            out = out + self.V @ (self.C.T @ (self.U.T @ v))
        return out

    def scaled(self, a):
        return DiagonalPlusLowRank(a * self.diag, self.U, a * self.C, self.V)

    def materialize(self):
        return np.diag(self.diag) + self.U @ self.C @ self.V.T


class SandwichBlock(GradientBlock):
    """Jx^T inner Jy for warped kernels; inner acts in the warped space."""

    __slots__ = ("d", "Jx", "inner", "Jy")

    def __init__(self, Jx, inner, Jy):
        self.Jx = np.asarray(Jx, dtype=float)
        self.Jy = np.asarray(Jy, dtype=float)
        self.inner = inner
        self.d = self.Jx.shape[1]
        if self.Jy.shape[1] != self.d or self.Jx.shape[0] != inner.d or self.Jy.shape[0] != inner.d:
            raise DimensionMismatch("sandwich factor shapes disagree")

    def apply(self, v):
        v = self._check(v)
        r = self.Jx.shape[0]
        add_mults(2 * r * self.d)
        return self.Jx.T @ self.inner.apply(self.Jy @ v)

    def rmatvec(self, v):
        v = self._check(v)
        r = self.Jx.shape[0]
        add_mults(2 * r * self.d)
        return self.Jy.T @ self.inner.rmatvec(self.Jx @ v)

    def scaled(self, a):
        return SandwichBlock(self.Jx, self.inner.scaled(a), self.Jy)

    def materialize(self):
        return self.Jx.T @ self.inner.materialize() @ self.Jy


class DiagSandwichBlock(GradientBlock):
    """diag(wx) inner diag(wy), the per-coordinate-rescaling sandwich."""

    __slots__ = ("d", "wx", "inner", "wy")

    def __init__(self, wx, inner, wy):
        self.wx = np.asarray(wx, dtype=float)
        self.wy = np.asarray(wy, dtype=float)
        self.inner = inner
        self.d = len(self.wx)
        if len(self.wy) != self.d or inner.d != self.d:
            raise DimensionMismatch("diagonal sandwich shapes disagree")

    def apply(self, v):
        v = self._check(v)
        add_mults(2 * self.d)
        return self.wx * self.inner.apply(self.wy * v)

    def rmatvec(self, v):
        v = self._check(v)
        add_mults(2 * self.d)
        return self.wy * self.inner.rmatvec(self.wx * v)

    def scaled(self, a):
        return DiagSandwichBlock(self.wx, self.inner.scaled(a), self.wy)

    def materialize(self):
        return self.wx[:, None] * self.inner.materialize() * self.wy[None, :]


class BlockSumBlock(GradientBlock):
    """Sum of blocks (heterogeneous children)."""

    __slots__ = ("d", "parts")

    def __init__(self, parts):
        self.parts = tuple(parts)
        self.d = self.parts[0].d
        if any(p.d != self.d for p in self.parts):
            raise DimensionMismatch("summands have different sizes")

    def apply(self, v):
        v = self._check(v)
        out = self.parts[0].apply(v)
        for p in self.parts[1:]:
            out = out + p.apply(v)
        return out

    def rmatvec(self, v):
        v = self._check(v)
        out = self.parts[0].rmatvec(v)
        for p in self.parts[1:]:
            out = out + p.rmatvec(v)
        return out

    def scaled(self, a):
        return BlockSumBlock([p.scaled(a) for p in self.parts])

    def materialize(self):
        out = self.parts[0].materialize()
        for p in self.parts[1:]:
            out = out + p.materialize()
        return out


class DenseBlock(GradientBlock):
    """Explicit d x d matrix; the generic fallback."""

    __slots__ = ("d", "M")

    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.d = self.M.shape[0]

    def apply(self, v):
        v = self._check(v)
        add_mults(self.d * self.d)
        return self.M @ v

    def rmatvec(self, v):
        v = self._check(v)
        add_mults(self.d * self.d)
        return self.M.T @ v

    def scaled(self, a):
        return DenseBlock(a * self.M)

    def materialize(self):
        return self.M.copy()


def apply(block: GradientBlock, v) -> np.ndarray:
    """Matrix-vector product with a structured block."""
    return block.apply(v)


def materialize(block: GradientBlock) -> np.ndarray:
    return block.materialize()


# --- low-rank bookkeeping ------------------------------------------------------


def _concat_lr(pieces, d):
    """Stack (U, C, V) triples block-diagonally in C."""
    Us = [p[0] for p in pieces if p[0].shape[1]]
    if not Us:
        return _empty_lr(d)
    U = np.concatenate([p[0] for p in pieces], axis=1)
    V = np.concatenate([p[2] for p in pieces], axis=1)
    ranks = [p[0].shape[1] for p in pieces]
    C = np.zeros((sum(ranks), sum(ranks)))
    at = 0
    for (u, c, v), r in zip(pieces, ranks):
        C[at : at + r, at : at + r] = c
        at += r
    return U, C, V


def _with_extra_lowrank(block, U2, C2, V2, max_rank):
    """Attach an extra U2 C2 V2^T correction to a block, fusing when cheap."""
    d = block.d
    r2 = U2.shape[1]
    if r2 == 0:
        return block
    if isinstance(block, ScaledIdentityPlusLowRank) and block.rank + r2 <= max_rank:
        U, C, V = _concat_lr([(block.U, block.C, block.V), (U2, C2, V2)], d)
        return ScaledIdentityPlusLowRank(d, block.alpha, U, C, V)
    if isinstance(block, DiagonalPlusLowRank) and block.rank + r2 <= max_rank:
        U, C, V = _concat_lr([(block.U, block.C, block.V), (U2, C2, V2)], d)
        return DiagonalPlusLowRank(block.diag, U, C, V)
    if r2 > max_rank:
        warnings.warn(
            f"low-rank correction of rank {r2} exceeds the cap {max_rank}; densifying",
            stacklevel=3,
        )
        return DenseBlock(block.materialize() + U2 @ C2 @ V2.T)
    extra = ScaledIdentityPlusLowRank(d, 0.0, U2, C2, V2)
    if isinstance(block, BlockSumBlock):
        return BlockSumBlock(block.parts + (extra,))
    return BlockSumBlock((block, extra))


# --- the engine -----------------------------------------------------------------


def gradient_block(k, x, y, force_dense: bool = False, max_rank: int = MAX_RANK):
    """Structured mixed-partial block and value/gradients of k at (x, y).

    ``force_dense`` routes every node through the generic forward-mode
    fallback (used by benchmarks as the unstructured baseline).
    """
    x, y = kernels._check_pair(k, x, y)
    if force_dense:
        return _dense_from_jet(k, x, y)
    return _grad(k, x, y, max_rank)


def _dense_from_jet(k, x, y):
    j = kernels.jet_eval(k, x, y)
    pair = GradPair(float(j.val), np.asarray(j.dx, float), np.asarray(j.dy, float))
    return DenseBlock(np.asarray(j.dxy, dtype=float)), pair


def _proto_block_pair(proto, c, x, y):
    d = len(x)
    if proto == kernels.ISO:
        r = x - y
        s = float(r @ r)
        return s, ScaledIdentityPlusLowRank(d, -2.0), GradPair(s, 2.0 * r, -2.0 * r), r
    if proto == kernels.DOT:
        s = float(x @ y)
        return s, ScaledIdentityPlusLowRank(d, 1.0), GradPair(s, y.copy(), x.copy()), None
    cv = np.asarray(c, dtype=float)
    s = float(cv @ (x - y))
    return s, ScaledIdentityPlusLowRank(d, 0.0), GradPair(s, cv.copy(), -cv.copy()), None


def _primitive_grad(k, x, y):
    """Fused chain rule over a raw input form."""
    d = len(x)
    s, base, pair0, r = _proto_block_pair(k.proto, k.c, x, y)
    try:
        f0, f1, f2 = k.fn.derivs(s, 2)
    except DomainError as exc:
        raise NonDifferentiable(f"{k.fn!r} not twice differentiable at s={s}: {exc}") from exc
    if k.proto == kernels.ISO:
        U = (x - y).reshape(d, 1)
        block = ScaledIdentityPlusLowRank(d, -2.0 * f1, U, np.array([[-4.0 * f2]]), U)
    elif k.proto == kernels.DOT:
        if f2 == 0.0:
            block = ScaledIdentityPlusLowRank(d, f1)
        else:
            block = ScaledIdentityPlusLowRank(
                d, f1, y.reshape(d, 1), np.array([[f2]]), x.reshape(d, 1)
            )
    else:
        cv = k.c_vec().reshape(d, 1)
        block = ScaledIdentityPlusLowRank(d, 0.0, cv, np.array([[-f2]]), cv)
    pair = GradPair(f0, f1 * pair0.gx, f1 * pair0.gy)
    return block, pair


def _grad(k, x, y, max_rank):
    if isinstance(k, kernels.Primitive):
        return _primitive_grad(k, x, y)

    if isinstance(k, kernels.Chain):
        Bg, pg = _grad(k.inner, x, y, max_rank)
        try:
            f0, f1, f2 = k.fn.derivs(pg.value, 2)
        except DomainError as exc:
            raise NonDifferentiable(
                f"{k.fn!r} not twice differentiable at s={pg.value}: {exc}"
            ) from exc
        if f2 == 0.0:
            block = Bg.scaled(f1)
        else:
            block = _with_extra_lowrank(
                Bg.scaled(f1),
                pg.gx.reshape(-1, 1),
                np.array([[f2]]),
                pg.gy.reshape(-1, 1),
                max_rank,
            )
        return block, GradPair(f0, f1 * pg.gx, f1 * pg.gy)

    if isinstance(k, kernels.Sum):
        blocks, pairs = zip(*(_grad(c, x, y, max_rank) for c in k.children))
        pair = GradPair(
            sum(p.value for p in pairs),
            np.sum([p.gx for p in pairs], axis=0),
            np.sum([p.gy for p in pairs], axis=0),
        )
        return _merge_sum(blocks, max_rank), pair

    if isinstance(k, kernels.Product):
        return _product_grad(k, x, y, max_rank)

    if isinstance(k, kernels.DirectSum):
        diag, u, v, vals = _direct_children(k, x, y, max_rank)
        pair = GradPair(float(np.sum(vals)), u.copy(), v.copy())
        return DiagonalPlusLowRank(diag), pair

    if isinstance(k, kernels.DirectProduct):
        return _direct_product_grad(k, x, y, max_rank)

    if isinstance(k, kernels.VerticalScale):
        return _vertical_grad(k, x, y, max_rank)

    if isinstance(k, kernels.Warp):
        ux, uy = k.warp(x), k.warp(y)
        Bh, ph = _grad(k.inner, ux, uy, max_rank)
        if k.warp.diag is not None:
            w = k.warp.diag
            pair = GradPair(ph.value, w * ph.gx, w * ph.gy)
            return DiagSandwichBlock(w, Bh, w), pair
        Jx, Jy = k.warp.jacobian(x), k.warp.jacobian(y)
        pair = GradPair(ph.value, Jx.T @ ph.gx, Jy.T @ ph.gy)
        return SandwichBlock(Jx, Bh, Jy), pair

    if isinstance(k, kernels.Scale):
        B, p = _grad(k.inner, x, y, max_rank)
        return B.scaled(k.a), p.scaled(k.a)

    # Opaque nodes: generic forward-mode fallback.
    return _dense_from_jet(k, x, y)


def _merge_sum(blocks, max_rank):
    """Sum of blocks; same-shape structured summands fuse when rank allows."""
    mergeable = all(isinstance(b, ScaledIdentityPlusLowRank) for b in blocks)
    if mergeable and sum(b.rank for b in blocks) <= max_rank:
        d = blocks[0].d
        U, C, V = _concat_lr([(b.U, b.C, b.V) for b in blocks], d)
        return ScaledIdentityPlusLowRank(d, sum(b.alpha for b in blocks), U, C, V)
    if len(blocks) == 1:
        return blocks[0]
    return BlockSumBlock(blocks)


def _loo_products(vals):
    """Leave-one-out products, zero-safe, O(r)."""
    r = len(vals)
    pre = np.ones(r + 1)
    suf = np.ones(r + 1)
    for i in range(r):
        pre[i + 1] = pre[i] * vals[i]
        suf[r - 1 - i] = suf[r - i] * vals[r - 1 - i]
    return pre[:r] * suf[1:]


def _loo2_matrix(vals):
    """P[i, j] = product of vals excluding i and j (zero diagonal)."""
    r = len(vals)
    P = np.zeros((r, r))
    for i in range(r):
        for j in range(i + 1, r):
            keep = [t for t in range(r) if t != i and t != j]
            prod = 1.0
            for t in keep:
                prod *= vals[t]
            P[i, j] = P[j, i] = prod
    return P


def product_correction_matrix(vals) -> np.ndarray:
    """The cross-term coefficient matrix of the product rule.

    Uses the O(r^2) diagonal-inverse identity when every factor is nonzero,
    and leave-one-out products otherwise.
    """
    vals = np.asarray(vals, dtype=float)
    r = len(vals)
    if np.all(vals != 0.0):
        total = float(np.prod(vals))
        inv = 1.0 / vals
        P = total * np.multiply.outer(inv, inv)
        P[np.arange(r), np.arange(r)] = 0.0
        return P
    return _loo2_matrix(vals)


def _product_grad(k, x, y, max_rank):
    parts = [_grad(c, x, y, max_rank) for c in k.children]
    if len(parts) == 1:
        return parts[0]
    vals = np.array([p.value for _, p in parts])
    r = len(parts)
    p_i = _loo_products(vals)
    total = float(np.prod(vals))

    Jx = np.column_stack([p.gx for _, p in parts])
    Jy = np.column_stack([p.gy for _, p in parts])
    P = product_correction_matrix(vals)

    scaled_children = [b.scaled(w) for (b, _), w in zip(parts, p_i)]
    base = _merge_sum(scaled_children, max_rank - r)
    block = _with_extra_lowrank(base, Jx, P, Jy, max_rank)

    pair = GradPair(total, Jx @ p_i, Jy @ p_i)
    return block, pair


def _direct_children(k, x, y, max_rank):
    """Per-coordinate second mixed partial, gradients, and values."""
    d = len(k.children)
    if len(x) != d:
        raise DimensionMismatch(f"direct combination over {d} coordinates, input has {len(x)}")
    diag = np.empty(d)
    u = np.empty(d)
    v = np.empty(d)
    vals = np.empty(d)
    for i, c in enumerate(k.children):
        b, p = _grad(c, x[i : i + 1], y[i : i + 1], max_rank)
        diag[i] = b.materialize()[0, 0]
        u[i] = p.gx[0]
        v[i] = p.gy[0]
        vals[i] = p.value
    return diag, u, v, vals


def _direct_product_grad(k, x, y, max_rank):
    diag, u, v, vals = _direct_children(k, x, y, max_rank)
    d = len(vals)
    p_i = _loo_products(vals)
    total = float(np.prod(vals))
    pair = GradPair(total, u * p_i, v * p_i)

    zeros = np.flatnonzero(vals == 0.0)
    base_diag = diag * p_i
    if len(zeros) == 0:
        ut = u / vals
        vt = v / vals
        block = DiagonalPlusLowRank(
            base_diag - total * ut * vt,
            ut.reshape(d, 1),
            np.array([[total]]),
            vt.reshape(d, 1),
        )
    elif len(zeros) == 1:
        z = int(zeros[0])
        q = 1.0
        for t in range(d):
            if t != z:
                q *= vals[t]
        w = np.zeros(d)
        wt = np.zeros(d)
        nz = vals != 0.0
        w[nz] = v[nz] * (q / vals[nz])
        wt[nz] = u[nz] * (q / vals[nz])
        ez = np.zeros(d)
        ez[z] = 1.0
        U = np.column_stack([ez, v[z] * wt])
        V = np.column_stack([u[z] * w, ez])
        block = DiagonalPlusLowRank(base_diag, U, np.eye(2), V)
    elif len(zeros) == 2:
        z1, z2 = (int(zeros[0]), int(zeros[1]))
        q = 1.0
        for t in range(d):
            if t != z1 and t != z2:
                q *= vals[t]
        e1 = np.zeros(d)
        e1[z1] = 1.0
        e2 = np.zeros(d)
        e2[z2] = 1.0
        U = np.column_stack([e1, e2])
        V = np.column_stack([e2, e1])
        C = np.diag([u[z1] * v[z2] * q, u[z2] * v[z1] * q])
        block = DiagonalPlusLowRank(base_diag, U, C, V)
    else:
        block = DiagonalPlusLowRank(np.zeros(d))
    return block, pair


def _vertical_grad(k, x, y, max_rank):
    fx, fy = k.field.value(x), k.field.value(y)
    gfx, gfy = k.field.grad(x), k.field.grad(y)
    Bh, ph = _grad(k.inner, x, y, max_rank)
    h = ph.value
    U = np.column_stack([gfx, ph.gx])
    V = np.column_stack([gfy, ph.gy])
    C = np.array([[h, fy], [fx, 0.0]])
    block = _with_extra_lowrank(Bh.scaled(fx * fy), U, C, V, max_rank)
    pair = GradPair(
        fx * h * fy,
        gfx * (h * fy) + (fx * fy) * ph.gx,
        (fx * fy) * ph.gy + (fx * h) * gfy,
    )
    return block, pair
