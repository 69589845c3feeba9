import math

import numpy as np
import pytest

from core.errors import ArgumentOrderError, ConvergenceError
from core.model import DelayDistribution, MeanValueFunction
from core.quadrature import (
    QuadratureConfig,
    adaptive_integrate,
    integrate_against,
    integrate_against_detail,
    integrate_delay_region,
    integrate_log_against,
)

LAM30 = MeanValueFunction.linear(30.0)


def test_against_linear_center():
    cfg = QuadratureConfig()
    assert integrate_against(lambda v: np.ones_like(v), LAM30, 0.0, 1.0, cfg) == pytest.approx(30.0, rel=1e-12)
    assert integrate_against(lambda v: v, LAM30, 0.0, 1.0, cfg) == pytest.approx(15.0, rel=1e-12)


def test_exponential_integrand():
    cfg = QuadratureConfig()
    val = integrate_against(lambda v: np.exp(-5.0 * (1.0 - v)), LAM30, 0.0, 1.0, cfg)
    assert val == pytest.approx(6.0 * (1.0 - math.exp(-5.0)), rel=1e-10)


def test_kinked_center_is_split_at_its_kink():
    lam = MeanValueFunction.capped_linear(10.0, 0.3)
    res = integrate_against_detail(lambda v: v, lam, 0.0, 1.0, QuadratureConfig())
    assert res.value == pytest.approx(10.0 * 0.3 ** 2 / 2, rel=1e-12)
    assert res.loss_digits == 0.0


def test_window_checks():
    with pytest.raises(ArgumentOrderError):
        integrate_against(lambda v: v, LAM30, 0.5, 0.2, QuadratureConfig())
    with pytest.raises(ArgumentOrderError):
        integrate_against(lambda v: v, LAM30, 0.0, 1.5, QuadratureConfig())
    assert integrate_against(lambda v: v, LAM30, 0.4, 0.4, QuadratureConfig()) == 0.0


def test_break_points_remove_discontinuity():
    step = lambda x: np.where(np.asarray(x) > 0.3, 1.0, 0.0)
    res = adaptive_integrate(step, 0.0, 1.0, QuadratureConfig(), breaks=[0.3])
    assert res.value == pytest.approx(0.7, rel=1e-14)


def test_convergence_error_carries_estimate():
    step = lambda x: np.where(np.asarray(x) > 0.3, 1.0, 0.0)
    with pytest.raises(ConvergenceError) as exc:
        adaptive_integrate(step, 0.0, 1.0, QuadratureConfig(max_depth=1))
    assert exc.value.estimate == pytest.approx(0.7, abs=0.05)
    assert exc.value.error_bound > 0.0


def test_log_integral_beyond_float_range():
    val, loss = integrate_log_against(
        lambda v: np.full_like(np.asarray(v, dtype=float), 800.0),
        lambda v: 1.0,
        MeanValueFunction.linear(1.0), 0.0, 1.0, QuadratureConfig(),
    )
    assert val.sign == 1
    assert val.logmag == pytest.approx(800.0, abs=1e-12)
    assert loss == 0.0


def test_log_integral_signed_cancellation():
    # int (v - 0.5) dv over [0, 1] vanishes
    val, loss = integrate_log_against(
        lambda v: np.log(np.abs(np.asarray(v) - 0.5)),
        lambda v: np.sign(np.asarray(v) - 0.5),
        MeanValueFunction.linear(1.0), 0.0, 1.0, QuadratureConfig(), extra_breaks=[0.5],
    )
    assert val.is_zero or abs(float(val)) < 1e-12


def test_uniform_delay_region():
    # int 30 F_D(1 - v) dv with D ~ U(0, 1)
    val = integrate_delay_region(
        lambda v, r: np.ones_like(np.asarray(r, dtype=float)),
        LAM30, DelayDistribution.uniform(0.0, 1.0),
        lambda v: -1.0, lambda v: 1.0 - v, QuadratureConfig(),
    )
    assert val == pytest.approx(15.0, rel=1e-9)


def test_exponential_delay_region():
    val = integrate_delay_region(
        lambda v, r: np.ones_like(np.asarray(r, dtype=float)),
        LAM30, DelayDistribution.exponential(2.0),
        lambda v: 1.0 - v, lambda v: 1e9, QuadratureConfig(),
    )
    assert val == pytest.approx(15.0 * (1.0 - math.exp(-2.0)), rel=1e-9)


def test_deterministic_delay_region_and_none():
    cfg = QuadratureConfig()
    one = lambda v, r: np.ones_like(np.asarray(v, dtype=float))
    val = integrate_delay_region(one, LAM30, DelayDistribution.deterministic(0.25),
                                 lambda v: -1.0, lambda v: 1.0 - v, cfg)
    assert val == pytest.approx(30.0 * 0.75, rel=1e-12)
    assert integrate_delay_region(one, LAM30, DelayDistribution.none(),
                                  lambda v: -1.0, lambda v: 1.0 - v, cfg) == 0.0


def test_config_violations():
    bad = QuadratureConfig(rel_tol=0.0, abs_tol=-1.0, max_depth=0)
    assert [p for p, _ in bad.violations()] == [
        "quadrature.rel_tol", "quadrature.abs_tol", "quadrature.max_depth",
    ]


# ===============================
# Integral properties
# ===============================

CENTERS = [
    MeanValueFunction.linear(30.0),
    MeanValueFunction.capped_linear(20.0, 0.4),
    MeanValueFunction.power(10.0, 2.5),
]


def _integrands(rng):
    k, w, c = rng.uniform(-4.0, 4.0), rng.uniform(0.5, 8.0), rng.uniform(-1.0, 1.0)
    return (
        lambda v: np.exp(k * np.asarray(v)),
        lambda v: np.cos(w * np.asarray(v)) + c,
    )


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lam", CENTERS)
def test_integration_is_linear(seed, lam):
    rng = np.random.default_rng(seed)
    cfg = QuadratureConfig()
    g1, g2 = _integrands(rng)
    alpha, beta = rng.uniform(-3.0, 3.0, size=2)
    combined = integrate_against(lambda v: alpha * g1(v) + beta * g2(v), lam, 0.0, 1.0, cfg)
    separate = alpha * integrate_against(g1, lam, 0.0, 1.0, cfg) + beta * integrate_against(g2, lam, 0.0, 1.0, cfg)
    scale = abs(alpha) * integrate_against(lambda v: np.abs(g1(v)), lam, 0.0, 1.0, cfg) \
        + abs(beta) * integrate_against(lambda v: np.abs(g2(v)), lam, 0.0, 1.0, cfg)
    assert abs(combined - separate) <= 1e-9 * scale


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("lam", CENTERS)
def test_splitting_the_interval_preserves_the_integral(seed, lam):
    rng = np.random.default_rng(100 + seed)
    cfg = QuadratureConfig()
    g, _ = _integrands(rng)
    cut = float(rng.uniform(0.05, 0.95))
    whole = integrate_against(g, lam, 0.0, 1.0, cfg)
    parts = integrate_against(g, lam, 0.0, cut, cfg) + integrate_against(g, lam, cut, 1.0, cfg)
    assert parts == pytest.approx(whole, rel=1e-9)
