import numpy as np
import pytest

from gradkernel import taylor
from gradkernel.errors import DomainError, OrderError
from gradkernel.taylor import Taylor4, eval_derivs


def _fd_base(fn, s, order, h):
    if order == 1:
        return (fn(s + h) - fn(s - h)) / (2 * h)
    if order == 2:
        return (fn(s + h) - 2 * fn(s) + fn(s - h)) / h**2
    if order == 3:
        return (fn(s + 2 * h) - 2 * fn(s + h) + 2 * fn(s - h) - fn(s - 2 * h)) / (2 * h**3)
    if order == 4:
        return (
            fn(s + 2 * h) - 4 * fn(s + h) + 6 * fn(s) - 4 * fn(s - h) + fn(s - 2 * h)
        ) / h**4
    raise ValueError(order)


def fd_deriv(fn, s, order, h):
    """Central finite difference, Richardson-extrapolated twice for orders
    3-4 where plain stencils cannot reach 1e-5 relative accuracy."""
    if order <= 2:
        return _fd_base(fn, s, order, h)

    def r1(hh):
        return (4.0 * _fd_base(fn, s, order, hh / 2) - _fd_base(fn, s, order, hh)) / 3.0

    return (16.0 * r1(h / 2) - r1(h)) / 15.0


FD_STEPS = {1: 1e-6, 2: 1e-5, 3: 4e-2, 4: 4e-2}


def test_exp_all_orders_trivial():
    assert eval_derivs(taylor.exp_fn(), 0.0, 4) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_square_polynomial_trivial():
    f = taylor.poly_outer(2, 0.0)
    assert eval_derivs(f, 3.0, 4) == (9.0, 6.0, 2.0, 0.0, 0.0)


def test_rq_matches_finite_differences_order2():
    f = taylor.rq_outer(2.0)
    vals = eval_derivs(f, 0.5, 2)
    for order in (1, 2):
        fd = fd_deriv(lambda s: f(s), 0.5, order, 1e-5)
        assert abs(vals[order] - fd) <= 1e-6 * max(abs(fd), 1.0)


def zoo_functions():
    return [
        (taylor.identity(), (-3.0, 3.0)),
        (taylor.exp_fn(), (-2.0, 2.0)),
        (taylor.gauss_decay(1.0), (0.0, 4.0)),
        (taylor.gauss_decay(1.7), (0.0, 4.0)),
        (taylor.rq_outer(2.0), (0.0, 4.0)),
        (taylor.rq_outer(0.7), (0.0, 4.0)),
        (taylor.matern52_outer(), (0.25, 4.0)),
        (taylor.poly_outer(3, 1.0), (-2.0, 2.0)),
        (taylor.poly_outer(1, 0.5), (-2.0, 2.0)),
        (taylor.cos_fn(), (-3.0, 3.0)),
        (taylor.arcsin_fn(), (-0.7, 0.7)),
        (taylor.rsqrt_fn(), (0.3, 3.0)),
    ]


@pytest.mark.parametrize("fn,box", zoo_functions(), ids=lambda z: repr(z) if isinstance(z, taylor.ScalarFunction) else None)
def test_zoo_derivatives_match_finite_differences(fn, box):
    rng = np.random.default_rng(7)
    lo, hi = box
    for s in rng.uniform(lo, hi, size=100):
        vals = eval_derivs(fn, float(s), 4)
        for order in (1, 2, 3, 4):
            fd = fd_deriv(lambda t: fn(t), float(s), order, FD_STEPS[order])
            # FD roundoff is proportional to the size of the sampled values,
            # so the relative band uses the larger of derivative and value.
            scale = max(abs(vals[order]), abs(fd), abs(vals[0]), 1.0)
            assert abs(vals[order] - fd) <= 1e-5 * scale, (fn, s, order)


def test_order_cap():
    with pytest.raises(OrderError):
        eval_derivs(taylor.exp_fn(), 0.0, 5)


def test_rq_domain_error():
    with pytest.raises(DomainError):
        eval_derivs(taylor.rq_outer(1.0), -3.0, 1)


def test_matern_high_order_at_zero_is_domain_error():
    f = taylor.matern52_outer()
    assert eval_derivs(f, 0.0, 2)[1] == pytest.approx(-5.0 / 6.0)
    with pytest.raises(DomainError):
        eval_derivs(f, 0.0, 3)


def test_constant_lifting():
    t = Taylor4.lift(2.5)
    assert t.derivs() == (2.5, 0.0, 0.0, 0.0, 0.0)


def test_taylor_composition_exact_for_polynomials():
    # f(s) = 2 s^2 + s, g(s) = s^2 - 3 s + 1; compare against the analytic
    # expansion of f(g) computed symbolically via numpy polynomials.
    fp = np.polynomial.Polynomial([0.0, 1.0, 2.0])
    gp = np.polynomial.Polynomial([1.0, -3.0, 1.0])
    comp = fp(gp)
    rng = np.random.default_rng(3)
    for s in rng.uniform(-2, 2, size=25):
        g_jet = Taylor4.variable(float(s)).power(2) - 3.0 * Taylor4.variable(float(s)) + 1.0
        f_of_g = 2.0 * g_jet * g_jet + g_jet
        want = [comp.deriv(m)(s) for m in range(5)]
        got = f_of_g.derivs()
        assert np.allclose(got, want, rtol=0, atol=1e-13 * max(1.0, np.max(np.abs(want))))


def test_taylor_arithmetic_rules():
    t = Taylor4.variable(0.3)
    e = t.exp()
    assert np.allclose(e.derivs(), (np.exp(0.3),) * 5)
    c = t.cos()
    assert c.c0 == pytest.approx(np.cos(0.3))
    assert c.c1 == pytest.approx(-np.sin(0.3))
    r = t.rsqrt()
    assert r.c0 == pytest.approx(0.3**-0.5)
    assert r.c1 == pytest.approx(-0.5 * 0.3**-1.5)


def test_vectorized_derivs_broadcast():
    f = taylor.rq_outer(2.0)
    s = np.linspace(0.1, 2.0, 7)
    vals = f.derivs(s, 2)
    for i, si in enumerate(s):
        scalar = f.derivs(float(si), 2)
        assert np.allclose([v[i] for v in vals], scalar)
