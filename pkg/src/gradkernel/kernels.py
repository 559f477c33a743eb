"""Kernel computational graphs: primitives, combinators, and the named zoo.

A kernel is a DAG of immutable nodes.  Primitives are a scalar function
applied to one of three input forms -- the squared difference ``r.r``, a
fixed linear functional ``c.r`` of the difference, or the dot product
``x.y``.  Combinators (sums, products, per-coordinate direct sums/products,
vertical rescaling, input warping, chaining a scalar function) build
everything else; the named kernels are sugar over these nodes, so the
structured derivative engine needs no kernel-specific code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import jets, taylor
from .errors import DimensionMismatch, DomainError

ISO = "iso"      # (x - y).(x - y)
SLF = "slf"      # c.(x - y)
DOT = "dot"      # x.y
_PROTOS = (ISO, SLF, DOT)


# --- input traits -------------------------------------------------------------

@dataclass(frozen=True)
class InputTrait:
    kind: str                      # isotropic | dot_product | stationary_linear | generic
    c: Optional[tuple] = None      # the functional's vector, when stationary_linear

    def __repr__(self):
        return self.kind if self.c is None else f"{self.kind}(c={list(self.c)})"


ISOTROPIC = InputTrait("isotropic")
DOT_PRODUCT = InputTrait("dot_product")
GENERIC = InputTrait("generic")


def stationary_linear(c) -> InputTrait:
    return InputTrait("stationary_linear", tuple(float(v) for v in np.asarray(c).ravel()))


# --- auxiliary value types ----------------------------------------------------

class ScalarField:
    """Differentiable scalar field on inputs, used by vertical rescaling.

    Closed-form gradient and Hessian are required; the Hessian feeds the
    second-order covariance path.
    """

    def __init__(self, name, value, grad, hess):
        self.name = name
        self._value = value
        self._grad = grad
        self._hess = hess

    def value(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x) -> np.ndarray:
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)

    def hess(self, x) -> np.ndarray:
        return np.asarray(self._hess(np.asarray(x, dtype=float)), dtype=float)

    def __repr__(self):
        return f"field:{self.name}"


def inverse_sqrt_norm_field() -> ScalarField:
    """f(x) = (1 + x.x)^(-1/2)."""

    def value(x):
        return (1.0 + x @ x) ** -0.5

    def grad(x):
        return -x * (1.0 + x @ x) ** -1.5

    def hess(x):
        n = 1.0 + x @ x
        return -np.eye(len(x)) * n ** -1.5 + 3.0 * np.multiply.outer(x, x) * n ** -2.5

    return ScalarField("inverse_sqrt_norm", value, grad, hess)


def gauss_norm_field() -> ScalarField:
    """f(x) = exp(-x.x)."""

    def value(x):
        return np.exp(-(x @ x))

    def grad(x):
        return -2.0 * x * np.exp(-(x @ x))

    def hess(x):
        e = np.exp(-(x @ x))
        return (-2.0 * np.eye(len(x)) + 4.0 * np.multiply.outer(x, x)) * e

    return ScalarField("gauss_norm", value, grad, hess)


class WarpMap:
    """Differentiable map of the inputs with Jacobian access.

    ``matrix`` is set for linear maps u(x) = U x; ``diag`` additionally for
    per-coordinate rescalings, whose Jacobian never needs dense storage.
    """

    def __init__(self, name, dim_in, dim_out, fn, jacobian, matrix=None, diag=None):
        self.name = name
        self.dim_in = dim_in
        self.dim_out = dim_out
        self._fn = fn
        self._jacobian = jacobian
        self.matrix = matrix
        self.diag = diag

    @property
    def is_linear(self):
        return self.matrix is not None or self.diag is not None

    def linear_matrix(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        return np.diag(self.diag)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        return np.asarray(self._jacobian(np.asarray(x, dtype=float)), dtype=float)

    def __repr__(self):
        return f"warp:{self.name}"


def linear_map(U) -> WarpMap:
    U = np.asarray(U, dtype=float)
    if U.ndim != 2:
        raise DimensionMismatch("linear warp matrix must be 2-D")
    return WarpMap("linear", U.shape[1], U.shape[0], lambda x: U @ x, lambda x: U, matrix=U)


def diag_map(w) -> WarpMap:
    w = np.asarray(w, dtype=float).ravel()
    d = len(w)
    return WarpMap(
        "diag", d, d, lambda x: w * x, lambda x: np.diag(w), diag=w
    )


# --- graph nodes ---------------------------------------------------------------

class KernelExpr:
    """Base node.  Instances are immutable; evaluation is side-effect free."""

    label: str = "kernel"

    def dim(self) -> Optional[int]:
        """Input dimension pinned by this subtree, or None if free."""
        return None

    def __repr__(self):
        return self.label


@dataclass(frozen=True, repr=False)
class Primitive(KernelExpr):
    proto: str
    fn: taylor.ScalarFunction
    c: Optional[tuple] = None      # functional vector for the slf form

    def __post_init__(self):
        if self.proto not in _PROTOS:
            raise ValueError(f"unknown input form {self.proto!r}")
        if self.proto == SLF and self.c is None:
            raise ValueError("slf primitive needs its functional vector c")
        if self.c is not None:
            object.__setattr__(self, "c", tuple(float(v) for v in np.asarray(self.c).ravel()))

    @property
    def label(self):
        return f"{self.fn!r}({self.proto})"

    def c_vec(self) -> np.ndarray:
        return np.asarray(self.c, dtype=float)

    def dim(self):
        return len(self.c) if self.c is not None else None


@dataclass(frozen=True, repr=False)
class Chain(KernelExpr):
    fn: taylor.ScalarFunction
    inner: KernelExpr

    @property
    def label(self):
        return f"{self.fn!r}o({self.inner!r})"

    def dim(self):
        return self.inner.dim()


@dataclass(frozen=True, repr=False)
class Sum(KernelExpr):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 1:
            raise ValueError("sum needs at least one child")

    @property
    def label(self):
        return "sum(" + ", ".join(repr(c) for c in self.children) + ")"

    def dim(self):
        return _common_dim(self.children)


@dataclass(frozen=True, repr=False)
class Product(KernelExpr):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 1:
            raise ValueError("product needs at least one child")

    @property
    def label(self):
        return "prod(" + ", ".join(repr(c) for c in self.children) + ")"

    def dim(self):
        return _common_dim(self.children)


@dataclass(frozen=True, repr=False)
class DirectSum(KernelExpr):
    children: tuple               # child i acts on coordinate i; len == d

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))

    @property
    def label(self):
        return f"dsum[{len(self.children)}]"

    def dim(self):
        return len(self.children)


@dataclass(frozen=True, repr=False)
class DirectProduct(KernelExpr):
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))

    @property
    def label(self):
        return f"dprod[{len(self.children)}]"

    def dim(self):
        return len(self.children)


@dataclass(frozen=True, repr=False)
class VerticalScale(KernelExpr):
    field: ScalarField
    inner: KernelExpr

    @property
    def label(self):
        return f"vscale({self.field!r}, {self.inner!r})"

    def dim(self):
        return self.inner.dim()


@dataclass(frozen=True, repr=False)
class Warp(KernelExpr):
    warp: WarpMap
    inner: KernelExpr

    def __post_init__(self):
        inner_d = self.inner.dim()
        if inner_d is not None and inner_d != self.warp.dim_out:
            raise DimensionMismatch(
                f"warp output dim {self.warp.dim_out} != inner kernel dim {inner_d}"
            )

    @property
    def label(self):
        return f"warp({self.warp!r}, {self.inner!r})"

    def dim(self):
        return self.warp.dim_in


@dataclass(frozen=True, repr=False)
class Scale(KernelExpr):
    a: float
    inner: KernelExpr

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("scale factor must be nonnegative")

    @property
    def label(self):
        return f"{self.a}*({self.inner!r})"

    def dim(self):
        return self.inner.dim()


@dataclass(frozen=True, repr=False)
class CustomKernel(KernelExpr):
    """Opaque user kernel given only by its evaluation.

    The callable must accept a pair of 1-D arrays and should be written in
    plain arithmetic (so forward-mode numbers pass through it); derivatives
    always come from the generic fallback.
    """

    fn: Callable
    d: Optional[int] = None
    name: str = "custom"

    @property
    def label(self):
        return self.name

    def dim(self):
        return self.d


def _common_dim(children) -> Optional[int]:
    dims = {c.dim() for c in children} - {None}
    if len(dims) > 1:
        raise DimensionMismatch(f"children pin conflicting dimensions {sorted(dims)}")
    return dims.pop() if dims else None


# --- evaluation -----------------------------------------------------------------

def _check_pair(k: KernelExpr, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise DimensionMismatch(f"inputs must be equal-length vectors, got {x.shape} vs {y.shape}")
    d = k.dim()
    if d is not None and len(x) != d:
        raise DimensionMismatch(f"kernel expects dimension {d}, got {len(x)}")
    return x, y


def evaluate(k: KernelExpr, x, y) -> float:
    """k(x, y)."""
    x, y = _check_pair(k, x, y)
    return float(_eval(k, x, y))


def _proto_value(proto: str, c, x, y) -> float:
    if proto == ISO:
        r = x - y
        return float(r @ r)
    if proto == DOT:
        return float(x @ y)
    return float(np.asarray(c, dtype=float) @ (x - y))


def _eval(k: KernelExpr, x, y):
    if isinstance(k, Primitive):
        return k.fn(_proto_value(k.proto, k.c, x, y))
    if isinstance(k, Chain):
        return k.fn(_eval(k.inner, x, y))
    if isinstance(k, Sum):
        return sum(_eval(c, x, y) for c in k.children)
    if isinstance(k, Product):
        out = 1.0
        for c in k.children:
            out *= _eval(c, x, y)
        return out
    if isinstance(k, DirectSum):
        return sum(_eval(c, x[i : i + 1], y[i : i + 1]) for i, c in enumerate(k.children))
    if isinstance(k, DirectProduct):
        out = 1.0
        for i, c in enumerate(k.children):
            out *= _eval(c, x[i : i + 1], y[i : i + 1])
        return out
    if isinstance(k, VerticalScale):
        return k.field.value(x) * _eval(k.inner, x, y) * k.field.value(y)
    if isinstance(k, Warp):
        return _eval(k.inner, k.warp(x), k.warp(y))
    if isinstance(k, Scale):
        return k.a * _eval(k.inner, x, y)
    if isinstance(k, CustomKernel):
        return float(k.fn(x, y))
    raise TypeError(f"not a kernel node: {k!r}")


def input_trait(k: KernelExpr) -> InputTrait:
    """The input form a kernel depends on, with homogeneous sums/products
    of one form classified as that form."""
    if isinstance(k, Primitive):
        if k.proto == ISO:
            return ISOTROPIC
        if k.proto == DOT:
            return DOT_PRODUCT
        return stationary_linear(k.c_vec())
    if isinstance(k, (Chain, Scale)):
        return input_trait(k.inner)
    if isinstance(k, (Sum, Product)):
        traits = [input_trait(c) for c in k.children]
        first = traits[0]
        if all(t == first for t in traits[1:]) and first.kind != "generic":
            return first
        return GENERIC
    return GENERIC


# --- jet evaluation (generic forward-mode fallback) ------------------------------

def jet_eval(k: KernelExpr, x, y, nested: bool = False) -> jets.BiDual:
    """Evaluate the graph on forward-mode numbers.

    Flat jets carry value, both gradients, and the mixed-partial matrix;
    nested jets add a second derivative order per argument (for the dense
    second-order fallback).
    """
    x, y = _check_pair(k, x, y)
    return _jet(k, x, y, nested)


def _seed(proto: str, c, x, y, nested: bool):
    if nested:
        if proto == ISO:
            return jets.nested_iso_seed(x, y)
        if proto == DOT:
            return jets.nested_dot_seed(x, y)
        return jets.nested_slf_seed(np.asarray(c, dtype=float), x, y)
    if proto == ISO:
        return jets.iso_seed(x, y)
    if proto == DOT:
        return jets.dot_seed(x, y)
    return jets.slf_seed(np.asarray(c, dtype=float), x, y)


def _jet(k: KernelExpr, x, y, nested: bool):
    if isinstance(k, Primitive):
        s = _seed(k.proto, k.c, x, y, nested)
        return jets.apply_scalar(k.fn._derivs_fn, s)
    if isinstance(k, Chain):
        return jets.apply_scalar(k.fn._derivs_fn, _jet(k.inner, x, y, nested))
    if isinstance(k, Sum):
        out = _jet(k.children[0], x, y, nested)
        for c in k.children[1:]:
            out = out + _jet(c, x, y, nested)
        return out
    if isinstance(k, Product):
        out = _jet(k.children[0], x, y, nested)
        for c in k.children[1:]:
            out = out * _jet(c, x, y, nested)
        return out
    if isinstance(k, (DirectSum, DirectProduct)):
        d = len(k.children)
        terms = []
        for i, c in enumerate(k.children):
            sub = _jet(c, x[i : i + 1], y[i : i + 1], nested)
            emb = np.zeros((1, d))
            emb[0, i] = 1.0
            terms.append(
                jets.nested_pullback(sub, emb, emb) if nested else jets.pullback(sub, emb, emb)
            )
        out = terms[0]
        for t in terms[1:]:
            out = (out + t) if isinstance(k, DirectSum) else (out * t)
        return out
    if isinstance(k, VerticalScale):
        d = len(x)
        if nested:
            fx = jets.nested_field_seed(k.field.value(x), k.field.grad(x), k.field.hess(x), True)
            fy = jets.nested_field_seed(k.field.value(y), k.field.grad(y), k.field.hess(y), False)
        else:
            fx = jets.field_seed(k.field.value(x), k.field.grad(x), d)
            fy = jets.swap(jets.field_seed(k.field.value(y), k.field.grad(y), d))
        return fx * _jet(k.inner, x, y, nested) * fy
    if isinstance(k, Warp):
        ux, uy = k.warp(x), k.warp(y)
        sub = _jet(k.inner, ux, uy, nested)
        if nested:
            if not k.warp.is_linear:
                raise DomainError("second-order fallback through a nonlinear warp")
            U = k.warp.linear_matrix()
            return jets.nested_pullback(sub, U, U)
        return jets.pullback(sub, k.warp.jacobian(x), k.warp.jacobian(y))
    if isinstance(k, Scale):
        return _jet(k.inner, x, y, nested) * float(k.a)
    if isinstance(k, CustomKernel):
        if nested:
            X, Y = jets.nested_coordinate_seeds(x, y)
        else:
            X, Y = jets.coordinate_seeds(x, y)
        return k.fn(X, Y)
    raise TypeError(f"not a kernel node: {k!r}")


# --- the named zoo ----------------------------------------------------------------

def rbf() -> KernelExpr:
    """exp(-|x - y|^2 / 2)."""
    return Primitive(ISO, taylor.gauss_decay(1.0))


def rational_quadratic(alpha: float = 2.0) -> KernelExpr:
    return Primitive(ISO, taylor.rq_outer(alpha))


def matern52() -> KernelExpr:
    return Primitive(ISO, taylor.matern52_outer())


def polynomial(p: int = 2, c: float = 1.0) -> KernelExpr:
    """(x.y + c)^p."""
    return Primitive(DOT, taylor.poly_outer(p, c))


def cosine(c) -> KernelExpr:
    """cos(c.(x - y)) for a fixed vector c."""
    return Primitive(SLF, taylor.cos_fn(), c=tuple(np.asarray(c, dtype=float).ravel()))


def exp_dot() -> KernelExpr:
    """exp(x.y)."""
    return Primitive(DOT, taylor.exp_fn())


def dot_kernel(c: float = 0.0) -> KernelExpr:
    """x.y + c (the plain dot product when c = 0)."""
    if c == 0.0:
        return Primitive(DOT, taylor.identity())
    return Primitive(DOT, taylor.poly_outer(1, c))


def neural_network() -> KernelExpr:
    """arcsin of the (1 + |.|^2)-normalized dot product."""
    return Chain(
        taylor.arcsin_fn(),
        VerticalScale(inverse_sqrt_norm_field(), Primitive(DOT, taylor.identity())),
    )


def rbf_network() -> KernelExpr:
    """exp(-|x|^2) exp(-|x - y|^2 / 2) exp(-|y|^2)."""
    return VerticalScale(gauss_norm_field(), rbf())


def spectral_mixture(weights, lengthscales, frequencies) -> KernelExpr:
    """Sum of gaussian-decay x cosine products, one per component.

    ``frequencies`` is a (q, d) array of functional vectors; component q is
    w_q * exp(-|r|^2 / (2 l_q^2)) * cos(c_q . r).
    """
    weights = np.asarray(weights, dtype=float)
    lengthscales = np.asarray(lengthscales, dtype=float)
    frequencies = np.atleast_2d(np.asarray(frequencies, dtype=float))
    if not (len(weights) == len(lengthscales) == frequencies.shape[0]):
        raise DimensionMismatch("component counts disagree")
    comps = []
    for w, ell, c in zip(weights, lengthscales, frequencies):
        comps.append(
            Scale(
                float(w),
                Product(
                    (
                        Primitive(ISO, taylor.gauss_decay(float(ell))),
                        Primitive(SLF, taylor.cos_fn(), c=tuple(c)),
                    )
                ),
            )
        )
    return Sum(tuple(comps))


def quadratic_mixture(c: float = 1.0) -> KernelExpr:
    """Matern-5/2 plus the squared shifted dot product (x.y + c)^2."""
    return Sum((matern52(), polynomial(2, c)))


def ard(lengthscales, inner: KernelExpr) -> KernelExpr:
    """Per-coordinate rescaling warp, u(x) = diag(1/l) x."""
    ls = np.asarray(lengthscales, dtype=float).ravel()
    if np.any(ls <= 0):
        raise DomainError("length scales must be positive")
    return Warp(diag_map(1.0 / ls), inner)


def linear_warp(U, inner: KernelExpr) -> KernelExpr:
    return Warp(linear_map(U), inner)
