import math

import numpy as np
import pytest

from core.errors import ScenarioValidationError, TableRangeError
from core.model import ClusterModel, DelayDistribution, MeanValueFunction, Scenario
from core.poisson_predictor import (
    build_poisson_tables,
    get_poisson_tables,
    poisson_log_pmf,
    poisson_pmf,
    poisson_signed_form,
    predict_poisson,
    predict_poisson_curve,
)
from core.prediction_record import FLAG_DEGENERATE

C00 = 6.0 * (1.0 - math.exp(-5.0))


def test_first_coefficient(study_scenario, quad):
    tab = build_poisson_tables(study_scenario, 5, quad)
    assert tab.c00 == pytest.approx(C00, rel=1e-10)
    assert tab.delta_mass == pytest.approx(150.0, rel=1e-10)
    assert tab.total_mass == 30.0


def test_probability_of_no_payments(study_scenario, quad):
    tab = build_poisson_tables(study_scenario, 5, quad)
    assert poisson_log_pmf(tab, 0) == pytest.approx(C00 - 30.0, rel=1e-10)


def test_prediction_given_no_payments(study_scenario, quad):
    # given M(t) = 0, surviving centers form a thinned Poisson process
    tab = build_poisson_tables(study_scenario, 5, quad)
    res = predict_poisson(tab, 0)
    assert res.mean == pytest.approx(5.0 * C00, rel=1e-9)
    assert res.variance == pytest.approx(30.0 * C00, rel=1e-9)
    assert res.flags == ()


def test_pmf_sums_to_one(small_scenario, quad):
    tab = build_poisson_tables(small_scenario, 120, quad)
    total = math.fsum(poisson_pmf(tab, m) for m in range(121))
    assert total == pytest.approx(1.0, abs=1e-8)


def test_tower_property(study_scenario, quad):
    tab = build_poisson_tables(study_scenario, 320, quad)
    total = math.fsum(poisson_pmf(tab, m) * predict_poisson(tab, m).mean for m in range(319))
    assert total == pytest.approx(150.0, rel=1e-6)


def test_curve_is_finite_and_increasing(study_scenario, quad):
    curve = predict_poisson_curve(study_scenario, 10, 170, quad)
    assert [r.value for r in curve] == list(range(10, 171))
    means = np.array([r.mean for r in curve])
    assert np.all(np.isfinite(means)) and np.all(means >= 0)
    assert np.all(np.diff(means) > 0)
    assert all(r.variance >= 0 for r in curve)


def test_curve_agrees_with_single_predictions(study_scenario, quad):
    curve = predict_poisson_curve(study_scenario, 40, 45, quad)
    tab = get_poisson_tables(study_scenario, 47, quad)
    for r in curve:
        assert predict_poisson(tab, r.value).mean == r.mean


def test_table_cache_reuses_larger_tables(study_scenario, quad):
    big = get_poisson_tables(study_scenario, 60, quad)
    assert get_poisson_tables(study_scenario, 20, quad) is big


def test_signed_form_agrees_for_moderate_m(small_scenario, quad):
    tab = build_poisson_tables(small_scenario, 20, quad)
    for m in (0, 5, 10):
        mean, variance = poisson_signed_form(small_scenario, m, quad)
        ref = predict_poisson(tab, m)
        assert mean == pytest.approx(ref.mean, rel=1e-8)
        assert variance == pytest.approx(ref.variance, rel=1e-6)


def test_degenerate_increment_gives_zero(quad):
    sc = Scenario(
        center=MeanValueFunction.linear(10.0),
        cluster=ClusterModel.poisson(MeanValueFunction.capped_linear(5.0, 0.5)),
        t=2.0,
    )
    for r in predict_poisson_curve(sc, 0, 5, quad):
        assert r.mean == 0.0 and r.variance == 0.0
        assert FLAG_DEGENERATE in r.flags


def test_rejects_other_families_and_delays(nb_scenario, study_scenario, quad):
    with pytest.raises(ScenarioValidationError):
        build_poisson_tables(nb_scenario, 5, quad)
    delayed = Scenario(center=study_scenario.center, cluster=study_scenario.cluster,
                       delay=DelayDistribution.exponential(1.0))
    with pytest.raises(ScenarioValidationError):
        build_poisson_tables(delayed, 5, quad)


def test_range_checks(study_scenario, quad):
    tab = build_poisson_tables(study_scenario, 5, quad)
    with pytest.raises(TableRangeError):
        predict_poisson(tab, 6)
    with pytest.raises(IndexError):
        predict_poisson_curve(study_scenario, 5, 2, quad)
