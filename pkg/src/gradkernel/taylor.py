"""Exact scalar derivatives up to fourth order.

Two pieces live here:

* :class:`Taylor4` -- truncated fourth-order Taylor (dual-number) arithmetic,
  used to compose scalar functions exactly when a kernel graph chains them.
* :class:`ScalarFunction` -- the outer functions of the kernel zoo, each with
  a hand-coded closed-form derivative chain (fast inner loop, vectorizes over
  numpy arrays).

Orders above 4 are never needed: second-order covariance blocks consume at
most the fourth derivative of an outer function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, OrderError

_FACT = (1.0, 1.0, 2.0, 6.0, 24.0)


@dataclass(frozen=True)
class Taylor4:
    """Value and first through fourth derivative of a scalar quantity.

    Fields hold derivative values (not factorial-scaled series coefficients);
    arithmetic converts internally.
    """

    c0: float
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0

    @staticmethod
    def lift(a: float) -> "Taylor4":
        return Taylor4(float(a))

    @staticmethod
    def variable(a: float) -> "Taylor4":
        return Taylor4(float(a), 1.0)

    def derivs(self) -> tuple:
        return (self.c0, self.c1, self.c2, self.c3, self.c4)

    def _coeffs(self) -> list:
        return [c / f for c, f in zip(self.derivs(), _FACT)]

    @staticmethod
    def _from_coeffs(a) -> "Taylor4":
        return Taylor4(*(c * f for c, f in zip(a, _FACT)))

    def __add__(self, other):
        other = _as_taylor(other)
        return Taylor4(*(a + b for a, b in zip(self.derivs(), other.derivs())))

    __radd__ = __add__

    def __neg__(self):
        return Taylor4(*(-c for c in self.derivs()))

    def __sub__(self, other):
        return self + (-_as_taylor(other))

    def __rsub__(self, other):
        return _as_taylor(other) + (-self)

    def __mul__(self, other):
        other = _as_taylor(other)
        a, b = self._coeffs(), other._coeffs()
        out = [0.0] * 5
        for i in range(5):
            for j in range(5 - i):
                out[i + j] += a[i] * b[j]
        return Taylor4._from_coeffs(out)

    __rmul__ = __mul__

    def compose(self, outer_derivs) -> "Taylor4":
        """Apply a scalar function given its derivatives at ``self.c0``.

        ``outer_derivs`` is ``(f(c0), f'(c0), ..., f''''(c0))``.  The result
        is the exact truncated Taylor jet of ``f(self)``.
        """
        b = [d / f for d, f in zip(outer_derivs, _FACT)]
        # Horner on the zero-constant part of self (series composition).
        delta = Taylor4(0.0, self.c1, self.c2, self.c3, self.c4)
        acc = Taylor4.lift(b[4])
        for k in (3, 2, 1, 0):
            acc = acc * delta + b[k]
        return acc

    def exp(self):
        e = math.exp(self.c0)
        return self.compose((e, e, e, e, e))

    def cos(self):
        c, s = math.cos(self.c0), math.sin(self.c0)
        return self.compose((c, -s, -c, s, c))

    def sin(self):
        s, c = math.sin(self.c0), math.cos(self.c0)
        return self.compose((s, c, -s, -c, s))

    def power(self, p: float):
        return self.compose(_power_derivs(self.c0, p, 4))

    def arcsin(self):
        return self.compose(_arcsin_derivs(self.c0, 4))

    def rsqrt(self):
        return self.compose(_power_derivs(self.c0, -0.5, 4))


def _as_taylor(x) -> Taylor4:
    if isinstance(x, Taylor4):
        return x
    return Taylor4.lift(x)


def _falling(p: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= p - j
    return out


def _zeros_like(s):
    return 0.0 if np.isscalar(s) else np.zeros_like(np.asarray(s, dtype=float))


def _power_derivs(s, p: float, order: int):
    arr = np.asarray(s, dtype=float)
    if (p != int(p) or p < 0) and np.any(arr <= 0):
        raise DomainError(f"s**{p} requires s > 0")
    out = []
    for k in range(order + 1):
        coef = _falling(p, k)
        if coef == 0.0:
            out.append(_zeros_like(s))
        else:
            val = coef * arr ** (p - k)
            out.append(float(val) if np.isscalar(s) else val)
    return tuple(out)


def _arcsin_derivs(s, order: int):
    arr = np.asarray(s, dtype=float)
    if np.any(np.abs(arr) >= 1.0):
        raise DomainError("arcsin requires |s| < 1")
    w = 1.0 - arr * arr
    table = [
        np.arcsin(arr),
        w ** -0.5,
        arr * w ** -1.5,
        (1.0 + 2.0 * arr * arr) * w ** -2.5,
        3.0 * arr * (3.0 + 2.0 * arr * arr) * w ** -3.5,
    ]
    out = table[: order + 1]
    if np.isscalar(s):
        return tuple(float(v) for v in out)
    return tuple(out)


class ScalarFunction:
    """Named scalar function with closed-form derivatives up to order 4.

    The derivative provider takes ``(s, order)`` and returns the tuple
    ``(f(s), ..., f^(order)(s))``; it broadcasts over numpy arrays and
    performs domain checking.  Requesting only low orders never triggers
    domain failures that concern higher orders (relevant at removable
    singularities).
    """

    def __init__(
        self,
        name: str,
        derivs_fn: Callable,
        params: dict | None = None,
        smoothness: int = 4,
    ):
        self.name = name
        self._derivs_fn = derivs_fn
        self.params = params or {}
        # Highest derivative order bounded on the whole domain; functions
        # below 4 cannot feed second-order covariance blocks.
        self.smoothness = smoothness

    def __repr__(self):
        if self.params:
            inner = ", ".join(f"{k}={v}" for k, v in self.params.items())
            return f"{self.name}({inner})"
        return self.name

    def __call__(self, s):
        return self._derivs_fn(s, 0)[0]

    def derivs(self, s, order: int = 4) -> tuple:
        if order > 4:
            raise OrderError(f"derivative order {order} > 4 not supported")
        if order < 0:
            raise OrderError(f"derivative order must be >= 0, got {order}")
        out = self._derivs_fn(s, order)
        return out[: order + 1]

    def apply_taylor(self, t: Taylor4) -> Taylor4:
        return t.compose(self._derivs_fn(t.c0, 4))


def eval_derivs(f: ScalarFunction, s, order: int) -> tuple:
    """Derivatives ``(f(s), f'(s), ..., f^(order)(s))`` of a zoo function."""
    return f.derivs(s, order)


# --- the zoo ----------------------------------------------------------------

def identity() -> ScalarFunction:
    def d(s, order):
        one = 1.0 if np.isscalar(s) else np.ones_like(np.asarray(s, dtype=float))
        z = _zeros_like(s)
        return (s, one, z, z, z)[: order + 1]

    return ScalarFunction("identity", d)


def exp_fn() -> ScalarFunction:
    def d(s, order):
        e = np.exp(s)
        return (e,) * (order + 1)

    return ScalarFunction("exp", d)


def gauss_decay(ell: float = 1.0) -> ScalarFunction:
    """f(s) = exp(-s / (2 ell^2)); the squared-exponential outer function."""
    if ell <= 0:
        raise DomainError("length scale must be positive")
    a = -0.5 / (ell * ell)

    def d(s, order):
        e = np.exp(a * s)
        return tuple(a ** k * e for k in range(order + 1))

    return ScalarFunction("gauss_decay", d, {"ell": ell})


def rq_outer(alpha: float) -> ScalarFunction:
    """f(s) = (1 + s/(2 alpha))^(-alpha); domain s > -2 alpha."""
    if alpha <= 0:
        raise DomainError("rational-quadratic shape must be positive")

    def d(s, order):
        arr = np.asarray(s, dtype=float)
        u = 1.0 + arr / (2.0 * alpha)
        if np.any(u <= 0):
            raise DomainError(f"rational quadratic requires s > {-2 * alpha}")
        out = []
        coef = 1.0
        for k in range(order + 1):
            val = coef * u ** (-alpha - k)
            out.append(float(val) if np.isscalar(s) else val)
            coef *= -(alpha + k) / (2.0 * alpha)
        return tuple(out)

    return ScalarFunction("rq", d, {"alpha": alpha})


def matern52_outer() -> ScalarFunction:
    """Matern-5/2 outer function in the squared-radius argument.

    f(s) = (1 + t + t^2/3) exp(-t) with t = sqrt(5 s).  The sqrt makes the
    raw chain singular at s = 0, but f, f', f'' have finite limits there and
    are evaluated by their closed forms; f''' and f'''' genuinely diverge at
    the origin, so orders above 2 require s > 0.
    """

    def d(s, order):
        arr = np.asarray(s, dtype=float)
        if np.any(arr < 0):
            raise DomainError("squared radius must be nonnegative")
        t = np.sqrt(5.0 * arr)
        e = np.exp(-t)
        out = [
            (1.0 + t + t * t / 3.0) * e,
            -(5.0 / 6.0) * (1.0 + t) * e,
            (25.0 / 12.0) * e,
        ][: order + 1]
        if order >= 3:
            if np.any(arr == 0.0):
                raise DomainError(
                    "matern52 derivatives above order 2 are unbounded at s = 0"
                )
            out.append(-(125.0 / 24.0) * e / t)
        if order >= 4:
            out.append((625.0 / 48.0) * e * (1.0 / (t * t) + 1.0 / t ** 3))
        if np.isscalar(s):
            return tuple(float(v) for v in out)
        return tuple(out)

    return ScalarFunction("matern52", d, smoothness=2)


def poly_outer(p: int, c: float = 0.0) -> ScalarFunction:
    """f(s) = (s + c)^p for integer degree p >= 1."""
    if int(p) != p or p < 1:
        raise DomainError(f"polynomial degree must be an integer >= 1, got {p}")
    p = int(p)

    def d(s, order):
        u = np.asarray(s, dtype=float) + c
        out = []
        for k in range(order + 1):
            if k > p:
                out.append(_zeros_like(s))
            else:
                val = _falling(p, k) * u ** (p - k)
                out.append(float(val) if np.isscalar(s) else val)
        return tuple(out)

    return ScalarFunction("poly", d, {"p": p, "c": c})


def cos_fn() -> ScalarFunction:
    def d(s, order):
        c, sn = np.cos(s), np.sin(s)
        return (c, -sn, -c, sn, c)[: order + 1]

    return ScalarFunction("cos", d)


def arcsin_fn() -> ScalarFunction:
    return ScalarFunction("arcsin", _arcsin_derivs)


def rsqrt_fn() -> ScalarFunction:
    return ScalarFunction("rsqrt", lambda s, order: _power_derivs(s, -0.5, order))


def shifted(fn: ScalarFunction, c: float) -> ScalarFunction:
    """s -> f(s + c) as a new scalar function."""

    def d(s, order):
        arg = s + c if np.isscalar(s) else np.asarray(s, dtype=float) + c
        return fn._derivs_fn(arg, order)

    return ScalarFunction(f"{fn.name}_shift", d, {**fn.params, "shift": c}, fn.smoothness)


def composed(outer: ScalarFunction, inner: ScalarFunction) -> ScalarFunction:
    """(outer o inner) with derivatives composed through Taylor arithmetic."""

    def d(s, order):
        if not np.isscalar(s):
            arr = np.asarray(s, dtype=float)
            cols = [d(float(v), order) for v in arr.ravel()]
            return tuple(
                np.array([c[k] for c in cols]).reshape(arr.shape)
                for k in range(order + 1)
            )
        t = inner.apply_taylor(Taylor4.variable(s))
        return outer.apply_taylor(t).derivs()[: order + 1]

    return ScalarFunction(
        f"{outer.name}.{inner.name}", d, smoothness=min(outer.smoothness, inner.smoothness)
    )


def scaled(fn: ScalarFunction, a: float) -> ScalarFunction:
    """s -> a * f(s)."""

    def d(s, order):
        return tuple(a * v for v in fn._derivs_fn(s, order))

    return ScalarFunction(f"scaled_{fn.name}", d, {**fn.params, "a": a}, fn.smoothness)
