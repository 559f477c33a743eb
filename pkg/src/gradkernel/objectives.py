"""Global-optimization benchmark functions with analytic gradients.

Each function carries its conventional evaluation box and known minimum.
``normalize`` produces the benchmark form used by the optimization
experiments: inputs live in [-1, 1]^d, the global minimum sits at 1/4 in
every coordinate with value exactly 0, and outputs are scaled into [0, 1]
by a per-function analytic upper bound (a bound rather than a sampled
maximum, so containment is guaranteed and the constant is reproducible).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import UnknownName

TWO_PI = 2.0 * np.pi


@dataclass
class TestFunction:
    name: str
    d: int
    box: tuple                      # (lo, hi) arrays, the evaluation domain
    value: Callable
    gradient: Callable
    min_value: float
    min_location: np.ndarray
    output_scale: Optional[float] = None   # set on normalized wrappers


def _box(lo, hi, d):
    return (np.full(d, float(lo)), np.full(d, float(hi)))


def _ackley(d):
    a, b, c = 20.0, 0.2, TWO_PI

    def value(x):
        x = np.asarray(x, dtype=float)
        t = np.linalg.norm(x)
        return float(
            np.e + a - a * np.exp(-b * t / np.sqrt(d)) - np.exp(np.sum(np.cos(c * x)) / d)
        )

    def gradient(x):
        x = np.asarray(x, dtype=float)
        t = np.linalg.norm(x)
        # radial subgradient 0 at the cusp
        if t == 0.0:
            g1 = np.zeros(d)
        else:
            g1 = a * b / np.sqrt(d) * np.exp(-b * t / np.sqrt(d)) * x / t
        g2 = np.exp(np.sum(np.cos(c * x)) / d) * (c / d) * np.sin(c * x)
        return g1 + g2

    return TestFunction("ackley", d, _box(-10, 10, d), value, gradient, 0.0, np.zeros(d))


def _rastrigin(d):
    def value(x):
        x = np.asarray(x, dtype=float)
        return float(10.0 * d + np.sum(x * x - 10.0 * np.cos(TWO_PI * x)))

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x + 10.0 * TWO_PI * np.sin(TWO_PI * x)

    return TestFunction("rastrigin", d, _box(-5.12, 5.12, d), value, gradient, 0.0, np.zeros(d))


def _griewank(d):
    idx = np.sqrt(np.arange(1, d + 1))

    def value(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x / 4000.0 - np.prod(np.cos(x / idx)) + 1.0)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        cosv = np.cos(x / idx)
        grad = x / 2000.0
        for i in range(d):
            rest = np.prod(cosv[:i]) * np.prod(cosv[i + 1 :])
            grad[i] += np.sin(x[i] / idx[i]) / idx[i] * rest
        return grad

    return TestFunction("griewank", d, _box(-200, 200, d), value, gradient, 0.0, np.zeros(d))


def _rosenbrock(d):
    a, b = 0.0, 10.0

    def value(x):
        x = np.asarray(x, dtype=float)
        return float(np.sum((x[:-1] - a) ** 2 + b * (x[1:] - x[:-1] ** 2) ** 2))

    def gradient(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(d)
        diff = x[1:] - x[:-1] ** 2
        g[:-1] += 2.0 * (x[:-1] - a) - 4.0 * b * diff * x[:-1]
        g[1:] += 2.0 * b * diff
        return g

    return TestFunction("rosenbrock", d, _box(-3, 3, d), value, gradient, 0.0, np.zeros(d))


def _dropwave(d):
    def value(x):
        x = np.asarray(x, dtype=float)
        t = np.linalg.norm(x)
        return float(-(1.0 + np.cos(12.0 * t)) / (t * t + 2.0))

    def gradient(x):
        x = np.asarray(x, dtype=float)
        t = np.linalg.norm(x)
        den = t * t + 2.0
        # sin(12 t)/t extended by continuity (value 12 at t = 0)
        sinc12 = 12.0 if t == 0.0 else np.sin(12.0 * t) / t
        return (12.0 * sinc12 * den + 2.0 * (1.0 + np.cos(12.0 * t))) * x / (den * den)

    return TestFunction(
        "dropwave", d, _box(-5.12, 5.12, d), value, gradient, -1.0, np.zeros(d)
    )


_FACTORIES = {
    "ackley": _ackley,
    "rastrigin": _rastrigin,
    "griewank": _griewank,
    "rosenbrock": _rosenbrock,
    "dropwave": _dropwave,
}

NAMES = tuple(sorted(_FACTORIES))


def make(name: str, d: int) -> TestFunction:
    if name not in _FACTORIES:
        raise UnknownName(f"unknown test function {name!r}; choices: {', '.join(NAMES)}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return _FACTORIES[name](d)


def _output_bound(tf: TestFunction, reach: np.ndarray) -> float:
    """Analytic upper bound of tf - min over {|x_i| <= reach_i}."""
    d = tf.d
    r2 = float(reach @ reach)
    rmax = float(np.max(reach))
    if tf.name == "ackley":
        return np.e + 20.0 - np.exp(-1.0)
    if tf.name == "rastrigin":
        return 20.0 * d + r2
    if tf.name == "griewank":
        return r2 / 4000.0 + 2.0
    if tf.name == "rosenbrock":
        return (d - 1) * (rmax * rmax + 10.0 * (rmax + rmax * rmax) ** 2)
    if tf.name == "dropwave":
        return 1.0   # range is exactly [-1, 0]
    raise UnknownName(tf.name)


def normalize(tf: TestFunction) -> TestFunction:
    """Benchmark form: domain [-1, 1]^d, minimum 0 at 1/4, outputs in [0, 1].

    The raw minimizer is pulled to z = 1/4 by the affine map
    x = (z - 1/4) * halfwidth + x_min (shift first, then output scaling),
    and values are divided by an analytic bound of the shifted range.
    """
    d = tf.d
    lo, hi = tf.box
    halfwidth = (hi - lo) / 2.0
    center = tf.min_location
    shift = 0.25 * np.ones(d)

    def to_raw(z):
        z = np.asarray(z, dtype=float)
        return center + (z - shift) * halfwidth

    reach = np.abs(halfwidth) * 1.25 + np.abs(center)
    scale = _output_bound(tf, reach)
    # subtract the value actually computed at the mapped minimizer, so the
    # normalized minimum is exactly zero in floating point
    floor = tf.value(to_raw(shift))

    def value(z):
        return (tf.value(to_raw(z)) - floor) / scale

    def gradient(z):
        return tf.gradient(to_raw(z)) * halfwidth / scale

    out = TestFunction(
        f"{tf.name}_normalized",
        d,
        _box(-1, 1, d),
        value,
        gradient,
        0.0,
        shift,
        output_scale=scale,
    )
    return out
