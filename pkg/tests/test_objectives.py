import numpy as np
import pytest

from gradkernel.errors import UnknownName
from gradkernel.objectives import NAMES, make, normalize


def fd_grad(fn, x, h=1e-6):
    d = len(x)
    g = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def test_ackley_min_at_origin():
    for d in (2, 7):
        tf = make("ackley", d)
        assert tf.value(np.zeros(d)) == pytest.approx(0.0, abs=1e-12)


def test_rastrigin_min_at_origin():
    tf = make("rastrigin", 4)
    assert tf.value(np.zeros(4)) == pytest.approx(0.0, abs=1e-12)


def test_dropwave_min_value():
    tf = make("dropwave", 2)
    assert tf.value(np.zeros(2)) == pytest.approx(-1.0)
    tf5 = make("dropwave", 5)
    assert tf5.value(np.zeros(5)) == pytest.approx(-1.0)


def test_rosenbrock_zero_at_origin():
    tf = make("rosenbrock", 4)
    assert tf.value(np.zeros(4)) == pytest.approx(0.0)


def test_value_at_known_minimizer():
    for name in NAMES:
        tf = make(name, 3)
        assert abs(tf.value(tf.min_location) - tf.min_value) <= 1e-10, name


def test_unknown_name():
    with pytest.raises(UnknownName):
        make("sphere", 2)


@pytest.mark.parametrize("d", [2, 4, 16])
def test_gradients_match_fd(d):
    rng = np.random.default_rng(d)
    for name in NAMES:
        tf = make(name, d)
        lo, hi = tf.box
        for _ in range(1000 // d):
            x = rng.uniform(lo, hi)
            g = tf.gradient(x)
            fd = fd_grad(tf.value, x)
            scale = max(np.max(np.abs(fd)), 1.0)
            assert np.max(np.abs(g - fd)) <= 1e-5 * scale, name


@pytest.mark.parametrize("d", [2, 4, 16])
def test_normalized_gradients_match_fd(d):
    rng = np.random.default_rng(d)
    for name in NAMES:
        nf = normalize(make(name, d))
        for _ in range(200 // d):
            z = rng.uniform(-1, 1, size=d)
            g = nf.gradient(z)
            fd = fd_grad(nf.value, z)
            scale = max(np.max(np.abs(fd)), 1.0)
            assert np.max(np.abs(g - fd)) <= 1e-5 * scale, name


def test_normalized_minimum_is_exact():
    for name in NAMES:
        for d in (2, 4):
            nf = normalize(make(name, d))
            shift = 0.25 * np.ones(d)
            assert nf.value(shift) == 0.0, name
            assert np.allclose(nf.min_location, shift)


def test_normalized_gradient_zero_at_minimum():
    # ackley has a cusp at its minimum; the others are smooth there
    for name in ("rastrigin", "griewank", "rosenbrock", "dropwave"):
        nf = normalize(make(name, 4))
        g = nf.gradient(0.25 * np.ones(4))
        assert np.max(np.abs(g)) <= 1e-10, name


def test_normalized_range_in_unit_interval():
    rng = np.random.default_rng(99)
    for name in NAMES:
        nf = normalize(make(name, 4))
        Z = rng.uniform(-1, 1, size=(10**5, 4))
        vals = np.array([nf.value(z) for z in Z[: 10**4]])
        assert vals.min() >= 0.0, name
        assert vals.max() <= 1.0 + 1e-9, name


def test_normalized_griewank_full_range_sampling():
    nf = normalize(make("griewank", 4))
    rng = np.random.default_rng(7)
    vals = np.array([nf.value(z) for z in rng.uniform(-1, 1, size=(10**5, 4))])
    assert np.all(vals >= 0.0)
    assert np.all(vals <= 1.0 + 1e-9)


def test_output_scale_recorded():
    nf = normalize(make("griewank", 4))
    assert nf.output_scale is not None and nf.output_scale > 0
