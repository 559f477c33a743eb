"""Textual kernel expressions for the command line and the service.

Grammar (whitespace-insensitive)::

    expr   := NAME | NAME '(' args ')'
    args   := arg (',' arg)*
    arg    := expr | NAME '=' value | value
    value  := NUMBER | '[' value (',' value)* ']'

Names are fixed: atoms ``rbf``, ``rq(alpha=2)``, ``matern52``,
``poly(p=2, c=1)``, ``cos(c=1)``, ``expdot``, ``dot(c=0)``, ``nn``,
``rbfnet``, ``sm(q=2)``, ``qm(c=1)``; combinators ``sum(e, ...)``,
``prod(e, ...)``, ``scale(a, e)``, ``pow(e, p)``, ``exp(e)``,
``ard(e, ls=1)``, ``linwarp(e, rank=2)`` or ``linwarp(e, u=[[...]])``.

Scalar vector parameters broadcast to the requested dimension; parse errors
report a character position.  Kernels with free parameters (``sm`` without
explicit components, ``linwarp`` with ``rank``) fill them deterministically
from a fixed generator so benchmark runs are reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import kernels, taylor
from .errors import ParseError

_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<num>-?\d+\.?\d*(?:[eE][+-]?\d+)?)|(?P<punct>[()\[\],=]))")


@dataclass
class _Call:
    name: str
    args: list
    kwargs: dict
    pos: int


def _tokenize(text):
    out = []
    at = 0
    while at < len(text):
        m = _TOKEN.match(text, at)
        if m is None:
            if text[at:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[at]!r}", at)
        if m.group("name"):
            out.append(("name", m.group("name"), m.start("name")))
        elif m.group("num"):
            out.append(("num", float(m.group("num")), m.start("num")))
        else:
            out.append(("punct", m.group("punct"), m.start("punct")))
        at = m.end()
    out.append(("end", None, len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.at = 0

    def peek(self):
        return self.toks[self.at]

    def next(self):
        t = self.toks[self.at]
        self.at += 1
        return t

    def expect(self, punct):
        kind, val, pos = self.next()
        if kind != "punct" or val != punct:
            raise ParseError(f"expected {punct!r}", pos)

    def parse(self):
        node = self.parse_expr()
        kind, _, pos = self.peek()
        if kind != "end":
            raise ParseError("trailing input", pos)
        return node

    def parse_expr(self):
        kind, val, pos = self.next()
        if kind != "name":
            raise ParseError("expected a kernel name", pos)
        if self.peek()[:2] == ("punct", "("):
            self.next()
            args, kwargs = [], {}
            if self.peek()[:2] != ("punct", ")"):
                while True:
                    self.parse_arg(args, kwargs)
                    if self.peek()[:2] == ("punct", ","):
                        self.next()
                        continue
                    break
            self.expect(")")
            return _Call(val, args, kwargs, pos)
        return _Call(val, [], {}, pos)

    def parse_arg(self, args, kwargs):
        kind, val, pos = self.peek()
        if kind == "name" and self.toks[self.at + 1][:2] == ("punct", "="):
            self.next()
            self.next()
            kwargs[val] = self.parse_value()
            return
        if kind == "num" or (kind == "punct" and val == "["):
            args.append(self.parse_value())
            return
        args.append(self.parse_expr())

    def parse_value(self):
        kind, val, pos = self.next()
        if kind == "num":
            return val
        if kind == "punct" and val == "[":
            out = []
            if self.peek()[:2] != ("punct", "]"):
                while True:
                    out.append(self.parse_value())
                    if self.peek()[:2] == ("punct", ","):
                        self.next()
                        continue
                    break
            self.expect("]")
            return out
        if kind == "name":
            # bare names inside values are kernel expressions
            self.at -= 1
            return self.parse_expr()
        raise ParseError("expected a number, list, or expression", pos)


def parse(text: str) -> _Call:
    """Parse to an AST without binding a dimension."""
    return _Parser(text).parse()


def _vector(v, d, what, pos):
    arr = np.asarray(v, dtype=float).ravel() if isinstance(v, list) else np.full(d, float(v))
    if len(arr) != d:
        raise ParseError(f"{what} needs length {d}, got {len(arr)}", pos)
    return arr


def _num(v, what, pos):
    if isinstance(v, list) or isinstance(v, _Call):
        raise ParseError(f"{what} must be a number", pos)
    return float(v)


def _det_rng():
    return np.random.default_rng(12345)


def build(node, d: int):
    """Bind an AST (or expression text) to a kernel in dimension d."""
    if isinstance(node, str):
        node = parse(node)
    if not isinstance(node, _Call):
        raise ParseError("expected a kernel expression", 0)
    name, args, kw, pos = node.name, node.args, node.kwargs, node.pos

    def arg_kernel(i):
        if i >= len(args) or not isinstance(args[i], _Call):
            raise ParseError(f"{name} needs a kernel argument", pos)
        return build(args[i], d)

    if name == "rbf":
        return kernels.rbf()
    if name == "rq":
        return kernels.rational_quadratic(_num(kw.get("alpha", 2.0), "alpha", pos))
    if name == "matern52":
        return kernels.matern52()
    if name == "poly":
        return kernels.polynomial(int(_num(kw.get("p", 2), "p", pos)), _num(kw.get("c", 1.0), "c", pos))
    if name == "cos":
        return kernels.cosine(_vector(kw.get("c", 1.0), d, "c", pos))
    if name == "expdot":
        return kernels.exp_dot()
    if name == "dot":
        return kernels.dot_kernel(_num(kw.get("c", 0.0), "c", pos))
    if name == "nn":
        return kernels.neural_network()
    if name == "rbfnet":
        return kernels.rbf_network()
    if name == "sm":
        q = int(_num(kw.get("q", 2), "q", pos))
        rng = _det_rng()
        weights = kw.get("w", [1.0 / q] * q)
        ls = kw.get("ls", [1.0 + 0.3 * i for i in range(q)])
        freqs = kw.get("freq", rng.normal(size=(q, d)).tolist())
        return kernels.spectral_mixture(weights, ls, np.asarray(freqs, dtype=float).reshape(q, d))
    if name == "qm":
        return kernels.quadratic_mixture(_num(kw.get("c", 1.0), "c", pos))
    if name == "sum":
        if not args:
            raise ParseError("sum needs children", pos)
        return kernels.Sum(tuple(build(a, d) for a in args))
    if name == "prod":
        if not args:
            raise ParseError("prod needs children", pos)
        return kernels.Product(tuple(build(a, d) for a in args))
    if name == "scale":
        if len(args) != 2:
            raise ParseError("scale(a, expr)", pos)
        return kernels.Scale(_num(args[0], "a", pos), build(args[1], d))
    if name == "pow":
        if len(args) != 2:
            raise ParseError("pow(expr, p)", pos)
        p = int(_num(args[1], "p", pos))
        return kernels.Chain(taylor.poly_outer(p, 0.0), arg_kernel(0))
    if name == "exp":
        if len(args) != 1:
            raise ParseError("exp(expr)", pos)
        return kernels.Chain(taylor.exp_fn(), arg_kernel(0))
    if name == "ard":
        ls = _vector(kw.get("ls", 1.0), d, "ls", pos)
        return kernels.ard(ls, arg_kernel(0))
    if name == "linwarp":
        if "u" in kw:
            U = np.asarray(kw["u"], dtype=float)
            if U.ndim != 2 or U.shape[1] != d:
                raise ParseError(f"u must be (r, {d})", pos)
        else:
            r = int(_num(kw.get("rank", 2), "rank", pos))
            U = _det_rng().normal(size=(r, d)) / np.sqrt(d)
        return kernels.linear_warp(U, arg_kernel(0))
    raise ParseError(f"unknown kernel {name!r}", pos)
