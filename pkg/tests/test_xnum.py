import math

import numpy as np
import pytest

from core.errors import XRangeError
from core.xnum import (
    XReal,
    falling_factorial,
    log_abs_falling_factorial,
    log_binomial,
    log_binomial_row,
    xf_add,
    xf_from_log,
    xf_from_real,
    xf_mul,
    xf_ratio,
    xf_to_real,
    xsum,
)


def test_real_conversion_keeps_sign_and_magnitude():
    x = xf_from_real(-3.5)
    assert x.sign == -1
    assert xf_to_real(x) == pytest.approx(-3.5, rel=1e-15)
    assert xf_from_real(0.0).is_zero


def test_non_finite_input_rejected():
    with pytest.raises(XRangeError):
        xf_from_real(float("inf"))


def test_overflowing_value_raises_on_conversion():
    big = xf_from_log(800.0)
    with pytest.raises(XRangeError):
        xf_to_real(big)
    with pytest.raises(OverflowError):
        float(big)


def test_mul_and_ratio_far_outside_binary64():
    a = xf_from_log(1000.0)
    b = xf_from_log(998.0, sign=-1)
    assert xf_mul(a, b).logmag == pytest.approx(1998.0)
    assert xf_mul(a, b).sign == -1
    assert xf_ratio(a, b) == pytest.approx(-math.exp(2.0), rel=1e-13)


def test_ratio_by_zero():
    with pytest.raises(ZeroDivisionError):
        xf_ratio(xf_from_real(1.0), XReal.zero())
    assert xf_ratio(XReal.zero(), xf_from_real(2.0)) == 0.0


def test_add_same_and_opposite_sign():
    assert float(xf_add(xf_from_real(2.0), xf_from_real(3.0))) == pytest.approx(5.0, rel=1e-15)
    assert float(xf_add(xf_from_real(2.0), xf_from_real(-3.0))) == pytest.approx(-1.0, rel=1e-14)
    assert xf_add(xf_from_real(2.0), xf_from_real(-2.0)).is_zero
    assert xf_add(XReal.zero(), xf_from_real(4.0)) == xf_from_real(4.0)


def test_xsum_reports_cancellation_digits():
    value, loss = xsum([1, -1], [0.0, math.log(1 - 1e-6)])
    assert float(value) == pytest.approx(1e-6, rel=1e-8)
    assert loss == pytest.approx(6.0, abs=1e-6)


def test_xsum_exact_cancellation_is_zero_with_infinite_loss():
    value, loss = xsum([1, -1], [5.0, 5.0])
    assert value.is_zero
    assert loss == math.inf


def test_xsum_of_nothing():
    value, loss = xsum([0, 0], [1.0, 2.0])
    assert value.is_zero and loss == 0.0


@pytest.mark.parametrize("n,k", [(0, 0), (5, 2), (30, 15), (170, 3)])
def test_log_binomial_matches_exact(n, k):
    assert log_binomial(n, k) == pytest.approx(math.log(math.comb(n, k)), abs=1e-10)


def test_log_binomial_row_and_bad_arguments():
    row = log_binomial_row(10)
    assert np.allclose(np.exp(row), [math.comb(10, k) for k in range(11)])
    with pytest.raises(ValueError):
        log_binomial(3, 4)


def test_falling_factorial_small_and_signed():
    assert falling_factorial(0.5, 2) == pytest.approx(-0.25)
    assert falling_factorial(5.0, 0) == 1.0
    assert falling_factorial(3.0, 4) == 0.0


def test_falling_factorial_gamma_route_matches_lgamma():
    sign, logs = log_abs_falling_factorial(np.array([170.0]), 170)
    assert sign[0] == 1.0
    assert logs[0] == pytest.approx(math.lgamma(171), rel=1e-13)
    assert logs[0] == pytest.approx(706.5731, abs=1e-3)


@pytest.mark.parametrize("x", [2.5, -0.5, 80.25])
def test_gamma_route_agrees_with_direct_product(x):
    j = 70
    direct = math.prod(x - i for i in range(j))
    sign, logs = log_abs_falling_factorial(np.array([x]), j)
    assert sign[0] == math.copysign(1.0, direct)
    assert logs[0] == pytest.approx(math.log(abs(direct)), rel=1e-12)


def test_gamma_route_exact_zero_factor():
    sign, logs = log_abs_falling_factorial(np.array([10.0]), 100)
    assert sign[0] == 0.0
    assert logs[0] == -math.inf


# ===============================
# Algebraic properties
# ===============================

def _random_xreals(rng, n, base):
    signs = rng.choice([-1, 1], size=n)
    logs = base + rng.uniform(-5.0, 5.0, size=n)
    return [XReal(int(s), float(lg)) for s, lg in zip(signs, logs)]


def _largest(*xs):
    return max(xs, key=lambda x: x.logmag)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("base", [-1500.0, 0.0, 1500.0])
def test_addition_is_associative(seed, base):
    rng = np.random.default_rng(seed)
    for _ in range(50):
        a, b, c = _random_xreals(rng, 3, base)
        scale = XReal(1, _largest(a, b, c).logmag)
        lhs = xf_add(xf_add(a, b), c)
        rhs = xf_add(a, xf_add(b, c))
        assert abs(xf_ratio(lhs, scale) - xf_ratio(rhs, scale)) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_signed_cancellation_is_associative(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(50):
        a, b = _random_xreals(rng, 2, 800.0)
        c = -xf_add(a, b)
        scale = XReal(1, _largest(a, b).logmag)
        lhs = xf_add(xf_add(a, b), c)
        rhs = xf_add(a, xf_add(b, c))
        assert abs(xf_ratio(lhs, scale)) <= 1e-10
        assert abs(xf_ratio(rhs, scale)) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("base", [-700.0, 0.0, 700.0])
def test_multiplication_distributes_over_addition(seed, base):
    rng = np.random.default_rng(200 + seed)
    for _ in range(50):
        a, b, c = _random_xreals(rng, 3, base)
        scale = XReal(1, a.logmag + _largest(b, c).logmag)
        lhs = xf_mul(a, xf_add(b, c))
        rhs = xf_add(xf_mul(a, b), xf_mul(a, c))
        assert abs(xf_ratio(lhs, scale) - xf_ratio(rhs, scale)) <= 1e-10
