"""Nested first-order forward-mode numbers for the generic fallback paths.

A :class:`BiDual` carries a value, a tangent for each of the two kernel
arguments, and the mixed second-order cross term.  Evaluating a kernel on
BiDual inputs therefore yields the value, both gradients, and the full
matrix of mixed partials in one pass -- the dense fallback when no
structured rule applies.

Payloads are ordinarily float arrays; nesting BiDuals inside BiDuals (object
arrays) raises the order to two derivatives per argument, which is what the
dense Hessian fallback consumes.  Arithmetic is written so both payload
kinds work unchanged.
"""

from __future__ import annotations

import numpy as np


def _outer(a, b):
    return np.multiply.outer(a, b)


class BiDual:
    """value + x-tangent + y-tangent + cross term, truncated bilinearly."""

    __slots__ = ("val", "dx", "dy", "dxy")

    def __init__(self, val, dx, dy, dxy):
        self.val = val
        self.dx = dx
        self.dy = dy
        self.dxy = dxy

    def __repr__(self):
        return f"BiDual({self.val!r})"

    # Scalars (float/int) lift to constants with zero tangents matching ours.
    def _lift(self, other):
        if isinstance(other, BiDual):
            return other
        return BiDual(other, 0.0 * self.dx, 0.0 * self.dy, 0.0 * self.dxy)

    def __add__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        o = self._lift(other)
        return BiDual(self.val + o.val, self.dx + o.dx, self.dy + o.dy, self.dxy + o.dxy)

    __radd__ = __add__

    def __neg__(self):
        return BiDual(-self.val, -self.dx, -self.dy, -self.dxy)

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        o = self._lift(other)
        return BiDual(self.val - o.val, self.dx - o.dx, self.dy - o.dy, self.dxy - o.dxy)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        if not isinstance(other, BiDual):
            return BiDual(self.val * other, self.dx * other, self.dy * other, self.dxy * other)
        o = other
        return BiDual(
            self.val * o.val,
            self.dx * o.val + o.dx * self.val,
            self.dy * o.val + o.dy * self.val,
            self.dxy * o.val + o.dxy * self.val + _outer(self.dx, o.dy) + _outer(o.dx, self.dy),
        )

    __rmul__ = __mul__


def apply_scalar(derivs_fn, u, shift: int = 0):
    """Apply a scalar function to a (possibly nested) BiDual argument.

    ``derivs_fn(s, order)`` returns ``(f(s), ..., f^(order)(s))`` at a plain
    float.  ``shift`` selects the ``shift``-th derivative of f instead of f
    itself; recursion raises it by one per differentiation level, so two
    nested levels consume at most the fourth derivative.
    """
    if not isinstance(u, BiDual):
        return derivs_fn(u, shift + 2)[shift]
    f0 = apply_scalar(derivs_fn, u.val, shift)
    f1 = apply_scalar(derivs_fn, u.val, shift + 1)
    f2 = apply_scalar(derivs_fn, u.val, shift + 2)
    return BiDual(
        f0,
        f1 * u.dx,
        f1 * u.dy,
        f1 * u.dxy + f2 * _outer(u.dx, u.dy),
    )


# --- seeds for the three kernel input forms ---------------------------------

def iso_seed(x: np.ndarray, y: np.ndarray) -> BiDual:
    """Jet of (x - y).(x - y)."""
    r = x - y
    return BiDual(float(r @ r), 2.0 * r, -2.0 * r, -2.0 * np.eye(len(x)))


def dot_seed(x: np.ndarray, y: np.ndarray) -> BiDual:
    """Jet of x.y."""
    return BiDual(float(x @ y), y.copy(), x.copy(), np.eye(len(x)))


def slf_seed(c: np.ndarray, x: np.ndarray, y: np.ndarray) -> BiDual:
    """Jet of c.(x - y)."""
    r = x - y
    d = len(x)
    return BiDual(float(c @ r), c.copy(), -c.copy(), np.zeros((d, d)))


def field_seed(value: float, grad: np.ndarray, d_other: int) -> BiDual:
    """Jet of a function of x alone (or of y alone via ``swap``)."""
    d = len(grad)
    return BiDual(float(value), grad.copy(), np.zeros(d_other), np.zeros((d, d_other)))


def swap(j: BiDual) -> BiDual:
    """Exchange the roles of the two arguments (recursively for nested jets)."""
    if isinstance(j.val, BiDual):
        d = len(j.dx)
        dx = np.empty(d, dtype=object)
        dy = np.empty(d, dtype=object)
        dxy = np.empty((d, d), dtype=object)
        for a in range(d):
            dx[a] = swap(j.dy[a])
            dy[a] = swap(j.dx[a])
            for b in range(d):
                dxy[a, b] = swap(j.dxy[b, a])
        return BiDual(swap(j.val), dx, dy, dxy)
    return BiDual(j.val, j.dy, j.dx, j.dxy.T)


def pullback(j: BiDual, Jx: np.ndarray, Jy: np.ndarray) -> BiDual:
    """Chain a jet through differentiable reparameterizations of x and y.

    Exact for first-order-per-argument jets: the mixed cross derivative of
    a composition picks up no second-derivative terms of the inner maps.
    """
    return BiDual(j.val, Jx.T @ j.dx, Jy.T @ j.dy, Jx.T @ j.dxy @ Jy)


def coordinate_seeds(x: np.ndarray, y: np.ndarray):
    """Object arrays of per-coordinate BiDuals, for opaque kernel callables."""
    dx, dy = len(x), len(y)
    X = np.empty(dx, dtype=object)
    Y = np.empty(dy, dtype=object)
    for i in range(dx):
        ex = np.zeros(dx)
        ex[i] = 1.0
        X[i] = BiDual(float(x[i]), ex, np.zeros(dy), np.zeros((dx, dy)))
    for j in range(dy):
        ey = np.zeros(dy)
        ey[j] = 1.0
        Y[j] = BiDual(float(y[j]), np.zeros(dx), ey, np.zeros((dx, dy)))
    return X, Y


# --- nested seeds (two derivative orders per argument) -----------------------

def _zero_inner(d: int) -> BiDual:
    return BiDual(0.0, np.zeros(d), np.zeros(d), np.zeros((d, d)))


def nested_coordinate_seeds(x: np.ndarray, y: np.ndarray):
    """Per-coordinate nested seeds, for opaque kernel callables."""
    d = len(x)
    eye = np.eye(d)
    X = np.empty(d, dtype=object)
    Y = np.empty(d, dtype=object)
    for i in range(d):
        e = eye[i]
        val = BiDual(float(x[i]), e.copy(), np.zeros(d), np.zeros((d, d)))
        dx, dy, dxy = _nested_payloads(d)
        for a in range(d):
            dx[a] = _zero_inner(d)
            dx[a].val = float(e[a])
            dy[a] = _zero_inner(d)
            for b in range(d):
                dxy[a, b] = _zero_inner(d)
        X[i] = BiDual(val, dx, dy, dxy)
        val = BiDual(float(y[i]), np.zeros(d), e.copy(), np.zeros((d, d)))
        dx, dy, dxy = _nested_payloads(d)
        for a in range(d):
            dx[a] = _zero_inner(d)
            dy[a] = _zero_inner(d)
            dy[a].val = float(e[a])
            for b in range(d):
                dxy[a, b] = _zero_inner(d)
        Y[i] = BiDual(val, dx, dy, dxy)
    return X, Y


def _nested_payloads(d: int):
    dx = np.empty(d, dtype=object)
    dy = np.empty(d, dtype=object)
    dxy = np.empty((d, d), dtype=object)
    return dx, dy, dxy


def nested_iso_seed(x: np.ndarray, y: np.ndarray) -> BiDual:
    d = len(x)
    r = x - y
    eye = np.eye(d)
    val = BiDual(float(r @ r), 2.0 * r, -2.0 * r, -2.0 * eye)
    dx, dy, dxy = _nested_payloads(d)
    for a in range(d):
        e = eye[a]
        dx[a] = BiDual(2.0 * r[a], 2.0 * e, -2.0 * e, np.zeros((d, d)))
        dy[a] = BiDual(-2.0 * r[a], -2.0 * e, 2.0 * e, np.zeros((d, d)))
        for b in range(d):
            dxy[a, b] = _zero_inner(d)
            dxy[a, b].val = -2.0 if a == b else 0.0
    return BiDual(val, dx, dy, dxy)


def nested_dot_seed(x: np.ndarray, y: np.ndarray) -> BiDual:
    d = len(x)
    eye = np.eye(d)
    val = BiDual(float(x @ y), y.copy(), x.copy(), eye.copy())
    dx, dy, dxy = _nested_payloads(d)
    for a in range(d):
        e = eye[a]
        dx[a] = BiDual(float(y[a]), np.zeros(d), e.copy(), np.zeros((d, d)))
        dy[a] = BiDual(float(x[a]), e.copy(), np.zeros(d), np.zeros((d, d)))
        for b in range(d):
            dxy[a, b] = _zero_inner(d)
            dxy[a, b].val = 1.0 if a == b else 0.0
    return BiDual(val, dx, dy, dxy)


def nested_slf_seed(c: np.ndarray, x: np.ndarray, y: np.ndarray) -> BiDual:
    d = len(x)
    r = x - y
    val = BiDual(float(c @ r), c.copy(), -c.copy(), np.zeros((d, d)))
    dx, dy, dxy = _nested_payloads(d)
    for a in range(d):
        dx[a] = _zero_inner(d)
        dx[a].val = float(c[a])
        dy[a] = _zero_inner(d)
        dy[a].val = -float(c[a])
        for b in range(d):
            dxy[a, b] = _zero_inner(d)
    return BiDual(val, dx, dy, dxy)


def nested_field_seed(value: float, grad: np.ndarray, hess: np.ndarray, on_x: bool) -> BiDual:
    """Nested jet of a scalar field of one argument, given grad and Hessian."""
    d = len(grad)
    z = np.zeros(d)
    zz = np.zeros((d, d))
    if on_x:
        val = BiDual(float(value), grad.copy(), z.copy(), zz.copy())
    else:
        val = BiDual(float(value), z.copy(), grad.copy(), zz.copy())
    dx, dy, dxy = _nested_payloads(d)
    for a in range(d):
        if on_x:
            dx[a] = BiDual(float(grad[a]), hess[a].copy(), z.copy(), zz.copy())
            dy[a] = _zero_inner(d)
        else:
            dy[a] = BiDual(float(grad[a]), z.copy(), hess[a].copy(), zz.copy())
            dx[a] = _zero_inner(d)
        for b in range(d):
            dxy[a, b] = _zero_inner(d)
    return BiDual(val, dx, dy, dxy)


def nested_pullback(j: BiDual, U_x: np.ndarray, U_y: np.ndarray) -> BiDual:
    """Pull a nested jet back through *linear* maps of each argument."""
    val = pullback(j.val, U_x, U_y)
    d = U_x.shape[1]
    r = U_x.shape[0]
    dx = np.empty(d, dtype=object)
    dy = np.empty(d, dtype=object)
    dxy = np.empty((d, d), dtype=object)
    for a in range(d):
        dx[a] = pullback(_combine(j.dx, U_x[:, a]), U_x, U_y)
        dy[a] = pullback(_combine(j.dy, U_y[:, a]), U_x, U_y)
        for b in range(d):
            inner = _zero_like_inner(j.dxy[0, 0])
            for p in range(r):
                for q in range(r):
                    w = U_x[p, a] * U_y[q, b]
                    if w != 0.0:
                        inner = inner + j.dxy[p, q] * w
            dxy[a, b] = pullback(inner, U_x, U_y)
    return BiDual(val, dx, dy, dxy)


def _combine(objs, weights):
    out = None
    for o, w in zip(objs, weights):
        if w == 0.0:
            continue
        term = o * float(w)
        out = term if out is None else out + term
    if out is None:
        out = _zero_like_inner(objs[0])
    return out


def _zero_like_inner(template: BiDual) -> BiDual:
    return BiDual(
        0.0,
        np.zeros_like(template.dx),
        np.zeros_like(template.dy),
        np.zeros_like(template.dxy),
    )
