"""Structured operators for second-order kernel covariances.

Produced per input pair:

* ``hx`` -- the d^2 vector of second partials in the first argument,
* a d^2 x d operator coupling second partials in x with the gradient in y,
* a d^2 x d^2 operator coupling second partials in both arguments.

Everything is stored and applied in O(d^2): compositions of a scaled
identity, the transpose-shuffle permutation, Kronecker sums of rank-one
matrices, a thin V C W^T term whose columns are vec'd d x d matrices, and
Kronecker-product sandwiches for linearly warped kernels.  All vec
operations are column-major.

Support covers isotropic and dot-product primitives, scalar chains over
them, sums, scaling, vertical rescaling, and linear warps.  Anything else
falls back to a dense operator built by nested forward mode when the
dimension is small enough, and errors otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, taylor
from .counters import add_mults
from .errors import DimensionMismatch, DomainError, NonDifferentiable, UnsupportedNode

DENSE_FALLBACK_CAP = 8


def vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(d, d, order="F")


def shuffle_apply(v) -> np.ndarray:
    """Permutation sending the vec of a matrix to the vec of its transpose."""
    v = np.asarray(v, dtype=float)
    d = math.isqrt(v.size)
    if d * d != v.size:
        raise DimensionMismatch(f"length {v.size} is not a perfect square")
    return vec(unvec(v, d).T)


def kron_sum_rank1_apply(a, b, v) -> np.ndarray:
    """(a a^T (+) b b^T) v, the Kronecker sum of two rank-one matrices."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v = np.asarray(v, dtype=float)
    d = len(a)
    if len(b) != d or v.size != d * d:
        raise DimensionMismatch("kronecker-sum operand sizes disagree")
    H = unvec(v, d)
    add_mults(4 * d * d)
    return vec(np.multiply.outer(H @ a, a) + np.multiply.outer(b, H.T @ b))


def warp_kron_apply(U, v) -> np.ndarray:
    """(U (x) U) vec(H) = vec(U H U^T)."""
    U = np.asarray(U, dtype=float)
    v = np.asarray(v, dtype=float)
    r, d = U.shape
    if v.size != d * d:
        raise DimensionMismatch(f"expected length {d * d}, got {v.size}")
    H = unvec(v, d)
    add_mults(r * d * d + r * r * d)
    return vec(U @ H @ U.T)


def _frob(A, H):
    add_mults(A.size)
    return float(np.sum(A * H))


# --- hessian-gradient operators (d^2 x d) ---------------------------------------

class HessGradBlock:
    d: int

    def apply(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def scaled(self, a: float) -> "HessGradBlock":
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        out = np.empty((self.d * self.d, self.d))
        e = np.zeros(self.d)
        for c in range(self.d):
            e[c] = 1.0
            out[:, c] = self.apply(e)
            e[c] = 0.0
        return out

    def _check_w(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.d,):
            raise DimensionMismatch(f"expected length {self.d}, got {w.shape}")
        return w

    def _check_v(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d * self.d,):
            raise DimensionMismatch(f"expected length {self.d * self.d}, got {v.shape}")
        return v


class PrimitiveHG(HessGradBlock):
    """gamma (I (x) p + p (x) I) + sum_k vec(A_k) b_k^T."""

    def __init__(self, d, gamma, p, outers=()):
        self.d = d
        self.gamma = float(gamma)
        self.p = np.asarray(p, dtype=float)
        self.outers = [(np.asarray(A, float), np.asarray(b, float)) for A, b in outers]

    def apply(self, w):
        w = self._check_w(w)
        add_mults(2 * self.d * self.d)
        out = self.gamma * (np.multiply.outer(self.p, w) + np.multiply.outer(w, self.p))
        for A, b in self.outers:
            add_mults(self.d * self.d + self.d)
            out = out + A * float(b @ w)
        return vec(out)

    def rmatvec(self, v):
        v = self._check_v(v)
        H = unvec(v, self.d)
        add_mults(2 * self.d * self.d)
        out = self.gamma * ((H + H.T) @ self.p)
        for A, b in self.outers:
            out = out + b * _frob(A, H)
        return out

    def scaled(self, a):
        return PrimitiveHG(
            self.d, a * self.gamma, self.p, [(a * A, b) for A, b in self.outers]
        )


class HGSum(HessGradBlock):
    def __init__(self, parts):
        self.parts = tuple(parts)
        self.d = self.parts[0].d

    def apply(self, w):
        out = self.parts[0].apply(w)
        for p in self.parts[1:]:
            out = out + p.apply(w)
        return out

    def rmatvec(self, v):
        out = self.parts[0].rmatvec(v)
        for p in self.parts[1:]:
            out = out + p.rmatvec(v)
        return out

    def scaled(self, a):
        return HGSum([p.scaled(a) for p in self.parts])


class SandwichHG(HessGradBlock):
    """(U (x) U)^T inner U for a linear warp with matrix U (r x d)."""

    def __init__(self, U, inner):
        self.U = np.asarray(U, dtype=float)
        self.inner = inner
        self.r, self.d = self.U.shape

    def apply(self, w):
        w = self._check_w(w)
        add_mults(self.r * self.d)
        z = self.inner.apply(self.U @ w)
        Z = unvec(z, self.r)
        add_mults(self.r * self.d * self.d + self.r * self.r * self.d)
        return vec(self.U.T @ Z @ self.U)

    def rmatvec(self, v):
        v = self._check_v(v)
        H = unvec(v, self.d)
        add_mults(self.r * self.d * self.d + self.r * self.r * self.d)
        z = vec(self.U @ H @ self.U.T)
        add_mults(self.r * self.d)
        return self.U.T @ self.inner.rmatvec(z)

    def scaled(self, a):
        return SandwichHG(self.U, self.inner.scaled(a))


class DenseHG(HessGradBlock):
    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.d = self.M.shape[1]

    def apply(self, w):
        w = self._check_w(w)
        add_mults(self.M.size)
        return self.M @ w

    def rmatvec(self, v):
        v = self._check_v(v)
        add_mults(self.M.size)
        return self.M.T @ v

    def scaled(self, a):
        return DenseHG(a * self.M)

    def materialize(self):
        return self.M.copy()


# --- hessian-hessian operators (d^2 x d^2) ---------------------------------------

class HessHessBlock:
    d: int

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def scaled(self, a: float) -> "HessHessBlock":
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        n = self.d * self.d
        out = np.empty((n, n))
        e = np.zeros(n)
        for c in range(n):
            e[c] = 1.0
            out[:, c] = self.apply(e)
            e[c] = 0.0
        return out

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d * self.d,):
            raise DimensionMismatch(f"expected length {self.d * self.d}, got {v.shape}")
        return v


class PrimitiveHH(HessHessBlock):
    """(I + S)[alpha I + beta (p q^T (+) p q^T)] + sum_kl Vl_k C_kl vec(Vr_l)^T."""

    def __init__(self, d, alpha, beta, p, q, Vl=(), C=None, Vr=()):
        self.d = d
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.p = np.asarray(p, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.Vl = [np.asarray(M, float) for M in Vl]
        self.Vr = [np.asarray(M, float) for M in Vr]
        self.C = None if C is None else np.asarray(C, dtype=float)

    def apply(self, v):
        v = self._check(v)
        H = unvec(v, self.d)
        d2 = self.d * self.d
        add_mults(d2)
        W = self.alpha * H
        if self.beta != 0.0:
            add_mults(4 * d2 + d2)
            W = W + self.beta * (
                np.multiply.outer(H @ self.q, self.p)
                + np.multiply.outer(self.p, H.T @ self.q)
            )
        out = W + W.T
        if self.C is not None and len(self.Vl):
            g = np.array([_frob(R, H) for R in self.Vr])
            coef = self.C @ g
            add_mults(self.C.size)
            for L, c in zip(self.Vl, coef):
                add_mults(d2)
                out = out + c * L
        return vec(out)

    def scaled(self, a):
        return PrimitiveHH(
            self.d, a * self.alpha, a * self.beta, self.p, self.q,
            self.Vl, None if self.C is None else a * self.C, self.Vr,
        )


class HHSum(HessHessBlock):
    def __init__(self, parts):
        self.parts = tuple(parts)
        self.d = self.parts[0].d

    def apply(self, v):
        out = self.parts[0].apply(v)
        for p in self.parts[1:]:
            out = out + p.apply(v)
        return out

    def scaled(self, a):
        return HHSum([p.scaled(a) for p in self.parts])


class SandwichHH(HessHessBlock):
    """(U (x) U)^T inner (U (x) U)."""

    def __init__(self, U, inner):
        self.U = np.asarray(U, dtype=float)
        self.inner = inner
        self.r, self.d = self.U.shape

    def apply(self, v):
        v = self._check(v)
        z = warp_kron_apply(self.U, v)
        Z = unvec(self.inner.apply(z), self.r)
        add_mults(self.r * self.d * self.d + self.r * self.r * self.d)
        return vec(self.U.T @ Z @ self.U)

    def scaled(self, a):
        return SandwichHH(self.U, self.inner.scaled(a))


class DenseHH(HessHessBlock):
    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.d = math.isqrt(self.M.shape[0])

    def apply(self, v):
        v = self._check(v)
        add_mults(self.M.size)
        return self.M @ v

    def scaled(self, a):
        return DenseHH(a * self.M)

    def materialize(self):
        return self.M.copy()


class VerticalHG(HessGradBlock):
    """Second-order cross operator of f(x) h(x, y) f(y)."""

    def __init__(self, st):
        self.st = st
        self.d = st.d

    def apply(self, w):
        w = self._check_w(w)
        st = self.st
        add_mults(self.d + self.d * self.d)
        out = vec(st.A_mat) * float(st.gfy @ w) + st.fy * st.d_apply(w)
        return out

    def rmatvec(self, v):
        v = self._check_v(v)
        st = self.st
        H = unvec(v, self.d)
        add_mults(self.d)
        return st.gfy * _frob(st.A_mat, H) + st.fy * st.d_rmatvec(v, H)

    def scaled(self, a):
        return _ScaledHG(self, a)


class VerticalHH(HessHessBlock):
    """Second-order block of f(x) h(x, y) f(y)."""

    def __init__(self, st):
        self.st = st
        self.d = st.d

    def apply(self, v):
        v = self._check(v)
        st = self.st
        d = self.d
        H = unvec(v, d)
        add_mults(d * d)
        t1 = vec(st.A_mat) * _frob(st.Hfy, H)
        add_mults(2 * d * d)
        t2 = st.d_apply((H + H.T) @ st.gfy)
        w2 = st.hg_swapped.rmatvec(v)
        add_mults(3 * d * d)
        t3 = st.fy * (
            st.fx * st.hh_inner.apply(v)
            + vec(st.Hfx) * _frob(st.Hyh, H)
            + vec(np.multiply.outer(st.gfx, w2) + np.multiply.outer(w2, st.gfx))
        )
        return t1 + t2 + t3

    def scaled(self, a):
        return _ScaledHH(self, a)


class _ScaledHG(HessGradBlock):
    def __init__(self, base, a):
        self.base = base
        self.a = float(a)
        self.d = base.d

    def apply(self, w):
        return self.a * self.base.apply(w)

    def rmatvec(self, v):
        return self.a * self.base.rmatvec(v)

    def scaled(self, a):
        return _ScaledHG(self.base, self.a * a)


class _ScaledHH(HessHessBlock):
    def __init__(self, base, a):
        self.base = base
        self.a = float(a)
        self.d = base.d

    def apply(self, v):
        return self.a * self.base.apply(v)

    def scaled(self, a):
        return _ScaledHH(self.base, self.a * a)


@dataclass
class _VerticalState:
    """Everything the vertical-rescaling second-order formulas consume."""

    d: int
    fx: float
    fy: float
    gfx: np.ndarray
    gfy: np.ndarray
    Hfx: np.ndarray
    Hfy: np.ndarray
    h: float
    gxh: np.ndarray
    gyh: np.ndarray
    G: object                 # gradient block of the inner kernel
    Hxh: np.ndarray           # inner Hessian in x, as a matrix
    Hyh: np.ndarray           # inner Hessian in y, as a matrix
    hg_inner: HessGradBlock
    hg_swapped: HessGradBlock
    hh_inner: HessHessBlock
    A_mat: np.ndarray = None

    def __post_init__(self):
        # A = Hessian_x of f(x) h(x, y), shared by every formula here.
        self.A_mat = (
            self.fx * self.Hxh
            + self.Hfx * self.h
            + np.multiply.outer(self.gfx, self.gxh)
            + np.multiply.outer(self.gxh, self.gfx)
        )

    def d_apply(self, w):
        """Apply the y-Jacobian of A (a d^2 x d operator) to w."""
        u = self.G.apply(w)
        add_mults(3 * self.d * self.d + self.d)
        M = (
            self.fx * unvec(self.hg_inner.apply(w), self.d)
            + self.Hfx * float(self.gyh @ w)
            + np.multiply.outer(u, self.gfx)
            + np.multiply.outer(self.gfx, u)
        )
        return vec(M)

    def d_rmatvec(self, v, H):
        add_mults(3 * self.d * self.d)
        return (
            self.fx * self.hg_inner.rmatvec(v)
            + self.gyh * _frob(self.Hfx, H)
            + self.G.rmatvec((H + H.T) @ self.gfx)
        )


# --- assembly -------------------------------------------------------------------

@dataclass
class HessianBlocks:
    hx: np.ndarray
    hessgrad: HessGradBlock
    hesshess: HessHessBlock

    def __iter__(self):
        return iter((self.hx, self.hessgrad, self.hesshess))


def _as_primitive(k):
    """Reduce chains/scalings over a raw input form to one primitive."""
    if isinstance(k, kernels.Primitive):
        return k
    if isinstance(k, kernels.Chain):
        inner = _as_primitive(k.inner)
        if inner is None:
            return None
        return kernels.Primitive(inner.proto, taylor.composed(k.fn, inner.fn), c=inner.c)
    if isinstance(k, kernels.Scale):
        inner = _as_primitive(k.inner)
        if inner is None:
            return None
        return kernels.Primitive(inner.proto, taylor.scaled(inner.fn, k.a), c=inner.c)
    return None


def _check_c4_graph(k):
    if isinstance(k, kernels.Primitive):
        _require_c4(k.fn)
    elif isinstance(k, kernels.Chain):
        _require_c4(k.fn)
        _check_c4_graph(k.inner)
    elif isinstance(k, (kernels.Sum, kernels.Product, kernels.DirectSum, kernels.DirectProduct)):
        for c in k.children:
            _check_c4_graph(c)
    elif isinstance(k, (kernels.VerticalScale, kernels.Warp, kernels.Scale)):
        _check_c4_graph(k.inner)


def hessian_blocks(
    k, x, y, dense_cap: int = DENSE_FALLBACK_CAP, force_dense: bool = False
) -> HessianBlocks:
    """Structured second-order operators of k at (x, y).

    Returns the vec'd Hessian in x, the (d^2 x d) cross operator against the
    y-gradient, and the (d^2 x d^2) operator against the y-Hessian.
    """
    x, y = kernels._check_pair(k, x, y)
    _check_c4_graph(k)
    if force_dense:
        return _dense_hessian(k, x, y)
    return _hess(k, x, y, dense_cap)


def _hess(k, x, y, cap):
    prim = _as_primitive(k)
    if prim is not None:
        if prim.proto == kernels.SLF:
            return _maybe_dense(k, x, y, cap, "stationary linear functionals")
        return _primitive_hessian(prim, x, y)

    if isinstance(k, kernels.Sum):
        parts = [_hess(c, x, y, cap) for c in k.children]
        return HessianBlocks(
            np.sum([p.hx for p in parts], axis=0),
            HGSum([p.hessgrad for p in parts]),
            HHSum([p.hesshess for p in parts]),
        )

    if isinstance(k, kernels.Scale):
        inner = _hess(k.inner, x, y, cap)
        return HessianBlocks(
            k.a * inner.hx, inner.hessgrad.scaled(k.a), inner.hesshess.scaled(k.a)
        )

    if isinstance(k, kernels.Warp):
        if not k.warp.is_linear:
            return _maybe_dense(k, x, y, cap, "nonlinear warp")
        U = k.warp.linear_matrix()
        inner = _hess(k.inner, k.warp(x), k.warp(y), cap)
        hx = warp_kron_apply_transpose(U, inner.hx)
        return HessianBlocks(hx, SandwichHG(U, inner.hessgrad), SandwichHH(U, inner.hesshess))

    if isinstance(k, kernels.VerticalScale):
        return _vertical_hessian(k, x, y, cap)

    return _maybe_dense(k, x, y, cap, type(k).__name__)


def warp_kron_apply_transpose(U, v) -> np.ndarray:
    """(U (x) U)^T v = vec(U^T unvec(v) U)."""
    U = np.asarray(U, dtype=float)
    r, d = U.shape
    Z = unvec(np.asarray(v, dtype=float), r)
    add_mults(r * d * d + r * r * d)
    return vec(U.T @ Z @ U)


def _require_c4(fn):
    if fn.smoothness < 4:
        raise NonDifferentiable(
            f"{fn!r} is not four times differentiable; second-order blocks unavailable"
        )


def _primitive_hessian(k, x, y):
    d = len(x)
    _require_c4(k.fn)
    if k.proto == kernels.ISO:
        r = x - y
        s = float(r @ r)
        try:
            f0, f1, f2, f3, f4 = k.fn.derivs(s, 4)
        except DomainError as exc:
            raise NonDifferentiable(str(exc)) from exc
        eye = np.eye(d)
        rr = np.multiply.outer(r, r)
        hx = vec(2.0 * f1 * eye + 4.0 * f2 * rr)
        hg = PrimitiveHG(d, -4.0 * f2, r, [(-(4.0 * f2 * eye + 8.0 * f3 * rr), r)])
        C = np.array([[4.0 * f2, 8.0 * f3], [8.0 * f3, 16.0 * f4]])
        hh = PrimitiveHH(d, 4.0 * f2, 8.0 * f3, r, r, [eye, rr], C, [eye, rr])
        return HessianBlocks(hx, hg, hh)

    # dot product
    s = float(x @ y)
    try:
        f0, f1, f2, f3, f4 = k.fn.derivs(s, 4)
    except DomainError as exc:
        raise NonDifferentiable(str(exc)) from exc
    yy = np.multiply.outer(y, y)
    xx = np.multiply.outer(x, x)
    hx = vec(f2 * yy)
    hg = PrimitiveHG(d, f2, y, [(f3 * yy, x)])
    hh = PrimitiveHH(d, f2, f3, y, x, [yy], np.array([[f4]]), [xx])
    return HessianBlocks(hx, hg, hh)


def _vertical_hessian(k, x, y, cap):
    from . import gradblocks

    d = len(x)
    inner = _hess(k.inner, x, y, cap)
    swapped = _hess(k.inner, y, x, cap)
    G, pair = gradblocks.gradient_block(k.inner, x, y)
    st = _VerticalState(
        d=d,
        fx=k.field.value(x),
        fy=k.field.value(y),
        gfx=k.field.grad(x),
        gfy=k.field.grad(y),
        Hfx=k.field.hess(x),
        Hfy=k.field.hess(y),
        h=pair.value,
        gxh=pair.gx,
        gyh=pair.gy,
        G=G,
        Hxh=unvec(inner.hx, d),
        Hyh=unvec(swapped.hx, d),
        hg_inner=inner.hessgrad,
        hg_swapped=swapped.hessgrad,
        hh_inner=inner.hesshess,
    )
    hx = st.fy * vec(st.A_mat)
    return HessianBlocks(hx, VerticalHG(st), VerticalHH(st))


def _maybe_dense(k, x, y, cap, why):
    d = len(x)
    if d > cap:
        raise UnsupportedNode(
            f"no structured second-order rule for {why} and d={d} exceeds the "
            f"dense fallback cap {cap}"
        )
    return _dense_hessian(k, x, y)


def _dense_hessian(k, x, y):
    d = len(x)
    try:
        j = kernels.jet_eval(k, x, y, nested=True)
    except DomainError as exc:
        raise NonDifferentiable(str(exc)) from exc
    Hx = np.array([[j.dx[a].dx[b] for b in range(d)] for a in range(d)])
    hg = np.array(
        [[[j.dx[a].dxy[b, c] for c in range(d)] for b in range(d)] for a in range(d)]
    )
    hh = np.array(
        [
            [
                [[j.dxy[a, c].dxy[b, e] for e in range(d)] for c in range(d)]
                for b in range(d)
            ]
            for a in range(d)
        ]
    )
    return HessianBlocks(
        vec(Hx),
        DenseHG(hg.transpose(1, 0, 2).reshape(d * d, d)),
        DenseHH(hh.transpose(1, 0, 3, 2).reshape(d * d, d * d)),
    )
