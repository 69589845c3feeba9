import math

import numpy as np
import pytest

from core.errors import ArgumentOrderError, ScenarioValidationError
from core.model import (
    ClusterModel,
    DelayDistribution,
    MeanValueFunction,
    Scenario,
    cluster_increment_moments,
    mvf_eval,
    mvf_increment,
    shifted_kinks,
    unconditional_moments,
    validate_scenario,
)


# ===============================
# Mean value functions
# ===============================

def test_mvf_evaluation_examples():
    assert mvf_eval(MeanValueFunction.linear(10.0), 1.0) == 10.0
    assert mvf_eval(MeanValueFunction.linear(10.0), -1.0) == 0.0
    assert mvf_eval(MeanValueFunction.power(5.0, 2.0), 1.5) == pytest.approx(11.25)


def test_mvf_increment_examples():
    assert mvf_increment(MeanValueFunction.linear(5.0), 0.0, 1.0) == 5.0
    assert mvf_increment(MeanValueFunction.linear(5.0), 0.4, 0.4) == 0.0
    assert mvf_increment(MeanValueFunction.rational(5.0), 0.0, 1.0) == pytest.approx(2.5)


def test_mvf_increment_rejects_reversed_bounds():
    with pytest.raises(ArgumentOrderError):
        mvf_increment(MeanValueFunction.linear(5.0), 1.0, 0.5)
    with pytest.raises(ValueError):
        mvf_increment(MeanValueFunction.linear(5.0), 1.0, 0.5)


def test_rational_is_flat_after_its_peak():
    f = MeanValueFunction.rational(5.0)
    assert f(3.0) == pytest.approx(2.5)
    assert f.density(2.0) == 0.0
    assert f.kinks() == (1.0,)


def test_tabulated_interpolates_and_stays_flat():
    f = MeanValueFunction.tabulated([(0, 0), (1, 2), (2, 3)])
    assert f(0.5) == pytest.approx(1.0)
    assert f(1.5) == pytest.approx(2.5)
    assert f(5.0) == pytest.approx(3.0)
    assert f.density(0.5) == pytest.approx(2.0)
    assert f.density(2.5) == 0.0
    assert f.violations("c") == []


def test_vectorized_evaluation_returns_arrays():
    out = MeanValueFunction.capped_linear(4.0, 0.5)(np.array([-1.0, 0.25, 2.0]))
    assert isinstance(out, np.ndarray)
    assert np.allclose(out, [0.0, 1.0, 2.0])


@pytest.mark.parametrize("f,y,x", [
    (MeanValueFunction.linear(30.0), 15.0, 0.5),
    (MeanValueFunction.power(5.0, 2.0), 1.25, 0.5),
    (MeanValueFunction.rational(5.0), 2.0, 0.5),
])
def test_inverse(f, y, x):
    assert f.inverse(y) == pytest.approx(x, abs=1e-12)


def test_mvf_violations():
    assert MeanValueFunction.linear(-1.0).violations("c")[0][0] == "c.a"
    assert MeanValueFunction.power(1.0, 0.5).violations("c")[0][0] == "c.p"
    bad = MeanValueFunction.tabulated([(0, 0), (1, 2), (0.5, 1)])
    assert any("increasing" in msg for _, msg in bad.violations("c"))


def test_shifted_kinks():
    f = MeanValueFunction.capped_linear(1.0, 0.25)
    assert shifted_kinks(f, (1.0, 2.0)) == (0.75, 1.0, 1.75, 2.0)


# ===============================
# Clusters and delays
# ===============================

def test_cluster_increment_moments():
    mu = MeanValueFunction.linear(5.0)
    assert cluster_increment_moments(ClusterModel.poisson(mu), 0.0, 1.0) == pytest.approx((5.0, 30.0))
    assert cluster_increment_moments(ClusterModel.negbinomial(mu, 0.5), 0.0, 1.0) == pytest.approx((5.0, 35.0))


def test_cluster_violations():
    c = ClusterModel.negbinomial(MeanValueFunction.linear(5.0), 1.0)
    assert c.violations("model.cluster") == [("model.cluster.p", "p in (0,1) required")]


def test_delay_distributions():
    assert DelayDistribution.exponential(2.0).cdf(0.5) == pytest.approx(1 - math.exp(-1.0))
    assert DelayDistribution.exponential(2.0).sf(0.5) == pytest.approx(math.exp(-1.0))
    assert DelayDistribution.uniform(0.0, 2.0).cdf(0.5) == pytest.approx(0.25)
    assert DelayDistribution.deterministic(0.3).cdf(0.3) == 1.0
    assert DelayDistribution.deterministic(0.3).cdf(0.29) == 0.0
    with pytest.raises(ValueError):
        DelayDistribution.deterministic(0.3).pdf(0.3)


def test_delay_sampling_within_support():
    rng = np.random.default_rng(3)
    x = DelayDistribution.uniform(0.5, 1.5).sample(rng, 1000)
    assert x.min() >= 0.5 and x.max() < 1.5
    assert np.all(DelayDistribution.none().sample(rng, 4) == 0.0)


# ===============================
# Scenario
# ===============================

def test_validate_scenario_lists_every_violation():
    sc = Scenario(
        center=MeanValueFunction.linear(0.0),
        cluster=ClusterModel.negbinomial(MeanValueFunction.linear(5.0), 2.0),
        delay=DelayDistribution.exponential(-1.0),
        t=0.5,
    )
    with pytest.raises(ScenarioValidationError) as exc:
        validate_scenario(sc)
    paths = {p for p, _ in exc.value.violations}
    assert paths == {"t", "model.center", "model.cluster.p", "model.delay.rate"}


def test_empty_center_allowed_on_request():
    sc = Scenario(center=MeanValueFunction.linear(0.0),
                  cluster=ClusterModel.poisson(MeanValueFunction.linear(5.0)))
    assert validate_scenario(sc, allow_empty_center=True) is sc


def test_fingerprint_is_stable_and_sensitive(study_scenario):
    same = Scenario(center=MeanValueFunction.linear(30.0),
                    cluster=ClusterModel.poisson(MeanValueFunction.linear(5.0)))
    other = Scenario(center=MeanValueFunction.linear(30.0),
                     cluster=ClusterModel.poisson(MeanValueFunction.linear(5.0)), s=2.0)
    assert study_scenario.fingerprint() == same.fingerprint()
    assert study_scenario.fingerprint() != other.fingerprint()


# ===============================
# Unconditional moments
# ===============================

def test_unconditional_moments_poisson(study_scenario):
    um = unconditional_moments(study_scenario, 1.0, 1.0)
    assert um.mean_at_t0 == pytest.approx(75.0, rel=1e-9)
    assert um.cov == pytest.approx(325.0, rel=1e-9)


def test_unconditional_moments_negbinomial(nb_scenario):
    um = unconditional_moments(nb_scenario, 1.0, 1.0)
    assert um.mean_at_t0 == pytest.approx(75.0, rel=1e-9)
    assert um.cov == pytest.approx(400.0, rel=1e-9)


def test_unconditional_moments_at_later_time(study_scenario):
    # E[M(2)] = int 5 (2 - v) 30 dv
    um = unconditional_moments(study_scenario, 1.0, 2.0)
    assert um.mean_at_t0 == pytest.approx(225.0, rel=1e-9)


def test_unconditional_moments_argument_order(study_scenario):
    with pytest.raises(ArgumentOrderError):
        unconditional_moments(study_scenario, 2.0, 1.0)


def test_zero_delay_matches_no_delay(study_scenario):
    delayed = Scenario(center=study_scenario.center, cluster=study_scenario.cluster,
                       delay=DelayDistribution.deterministic(0.0))
    um = unconditional_moments(delayed, 1.0, 1.0)
    assert um.mean_at_t0 == pytest.approx(75.0, rel=1e-9)
    assert um.cov == pytest.approx(325.0, rel=1e-9)


# ===============================
# Mean value function properties
# ===============================

def _random_mvfs(rng):
    xs = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, size=4))])
    ys = np.concatenate([[0.0], np.cumsum(rng.uniform(0.0, 3.0, size=4))])
    return [
        MeanValueFunction.linear(rng.uniform(0.0, 50.0)),
        MeanValueFunction.rational(rng.uniform(0.0, 10.0)),
        MeanValueFunction.power(rng.uniform(0.0, 10.0), rng.uniform(1.0, 3.0)),
        MeanValueFunction.capped_linear(rng.uniform(0.0, 10.0), rng.uniform(0.1, 2.0)),
        MeanValueFunction.tabulated(list(zip(xs.tolist(), ys.tolist()))),
    ]


@pytest.mark.parametrize("seed", range(5))
def test_mvf_is_nondecreasing_and_zero_below_origin(seed):
    rng = np.random.default_rng(seed)
    grid = np.sort(rng.uniform(-1.0, 5.0, size=400))
    for f in _random_mvfs(rng):
        vals = np.asarray(f(grid), dtype=float)
        assert np.all(np.diff(vals) >= -1e-12 * max(1.0, float(vals.max())))
        assert np.all(vals[grid <= 0.0] == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_mvf_increments_are_additive(seed):
    rng = np.random.default_rng(50 + seed)
    for f in _random_mvfs(rng):
        for _ in range(40):
            a, b, c = np.sort(rng.uniform(0.0, 4.0, size=3))
            whole = mvf_increment(f, a, c)
            parts = mvf_increment(f, a, b) + mvf_increment(f, b, c)
            assert parts == pytest.approx(whole, rel=1e-12, abs=1e-12)
            assert mvf_increment(f, a, b) >= 0.0
