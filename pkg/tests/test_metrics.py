import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proptax_equity.domain import RatioObservation
from proptax_equity.errors import DegenerateRegressor, EmptyInput, ValidationError
from proptax_equity.metrics import (
    KERNELS,
    MetricKind,
    RatioData,
    accuracy_report,
    classify_regressive,
    etr_comparison,
    log_coefficient,
    mae,
    mape,
    prd,
    regressivity_report,
    rmse,
    suits_index,
)

from oracles import log_coefficient_loop, suits_loop


def obs(pairs, w=None):
    return [RatioObservation(a, s, None if w is None else w[i]) for i, (a, s) in enumerate(pairs)]


def test_mape_example():
    assert mape(obs([(110, 100), (95, 100)])) == pytest.approx(7.5, abs=1e-12)


def test_identity_accuracy():
    o = obs([(100, 100), (250, 250), (3, 3)])
    assert (mape(o), rmse(o), mae(o)) == (0.0, 0.0, 0.0)


def test_single_point_rmse_mae():
    o = obs([(110, 100)])
    assert rmse(o) == pytest.approx(10.0)
    assert mae(o) == pytest.approx(10.0)


def test_empty_input():
    for fn in (mape, rmse, mae, prd, suits_index):
        with pytest.raises(EmptyInput):
            fn([])


def test_weighted_means():
    o = obs([(110, 100), (95, 100)], w=[3.0, 1.0])
    assert mape(o) == pytest.approx((3 * 10 + 1 * 5) / 4)


def test_lc_power_law():
    s = np.exp(np.arange(1, 6, dtype=float))
    slope, se = log_coefficient(RatioData.from_arrays(s**0.8, s))
    assert slope == pytest.approx(-0.2, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-12)


def test_lc_constant_ratio_and_degenerate():
    s = np.array([1e5, 2e5, 3e5, 7e5])
    assert log_coefficient(RatioData.from_arrays(0.9 * s, s))[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DegenerateRegressor):
        log_coefficient(RatioData.from_arrays([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]))


def test_lc_matches_loop_oracle():
    rng = np.random.default_rng(4)
    s = rng.lognormal(12, 0.5, 200)
    a = s ** 0.9 * rng.lognormal(0, 0.1, 200)
    assert log_coefficient(RatioData.from_arrays(a, s))[0] == pytest.approx(
        log_coefficient_loop(a, s), abs=1e-10)


def test_lc_standard_error_classical():
    rng = np.random.default_rng(1)
    s = rng.lognormal(12, 0.5, 50)
    a = s * rng.lognormal(0, 0.2, 50)
    x, y = np.log(s), np.log(a / s)
    X = np.column_stack([np.ones_like(x), x])
    beta, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    sigma2 = res[0] / (len(x) - 2)
    se = math.sqrt(sigma2 * np.linalg.inv(X.T @ X)[1, 1])
    assert log_coefficient(RatioData.from_arrays(a, s))[1] == pytest.approx(se, rel=1e-9)


def test_suits_examples():
    assert suits_index(obs([(50, 100), (100, 200), (400, 800)])) == pytest.approx(0.0, abs=1e-12)
    regressive = suits_index(obs([(50, 100), (50, 900)]))
    assert regressive < 0
    assert regressive == pytest.approx(suits_loop([50, 50], [100, 900]), abs=1e-12)
    flipped = suits_index(obs([(10, 100), (90, 900)]))  # proportional reference
    progressive = suits_index(obs([(5, 100), (95, 900)]))
    assert flipped == pytest.approx(0, abs=1e-12) and progressive > 0


def test_suits_sign_flips_when_over_assessment_swaps():
    # proportional baseline A = 0.1 S; add 40 to one home or the other
    cheap_over = suits_index(obs([(50, 100), (90, 900)]))
    dear_over = suits_index(obs([(10, 100), (130, 900)]))
    assert cheap_over < 0 < dear_over
    assert cheap_over == pytest.approx(suits_loop([50, 90], [100, 900]), abs=1e-12)
    assert dear_over == pytest.approx(suits_loop([10, 130], [100, 900]), abs=1e-12)


def test_suits_loop_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = rng.lognormal(12, 0.7, 300)
        a = s * rng.lognormal(0, 0.3, 300)
        assert suits_index(RatioData.from_arrays(a, s)) == pytest.approx(suits_loop(a, s), abs=1e-9)


def test_prd_examples():
    assert prd(obs([(100, 100), (90, 50)])) == pytest.approx(1.4 / (95 / 75), rel=1e-12)
    assert prd(obs([(100, 100), (90, 50)])) == pytest.approx(1.1053, abs=1e-4)
    assert prd(obs([(50, 100), (100, 200)])) == pytest.approx(1.0, abs=1e-12)
    assert prd(obs([(120, 100), (800, 1000)])) > 1


def test_classify_regressive():
    assert classify_regressive("prd", 1.031).is_regressive
    assert not classify_regressive("prd", 1.03).is_regressive
    assert classify_regressive(MetricKind.LC, -0.05, ci=(-0.08, -0.02)).is_regressive
    assert not classify_regressive("lc", -0.05, ci=(-0.08, 0.01)).is_regressive
    assert not classify_regressive("suits", -0.05).is_regressive
    with pytest.raises(ValidationError):
        classify_regressive("prd", float("nan"))


def test_etr_examples():
    e = etr_comparison(110, 100, 0.01)
    assert e.effective_rate == pytest.approx(0.011)
    assert e.assessment_pct_error == pytest.approx(10.0) and e.rate_pct_error == pytest.approx(10.0)
    e = etr_comparison(100, 100, 0.01)
    assert e.assessment_pct_error == 0 and e.rate_pct_error == 0
    e = etr_comparison(50, 100, 0.02)
    assert e.effective_rate == pytest.approx(0.01)
    assert e.assessment_pct_error == pytest.approx(-50.0) and e.rate_pct_error == pytest.approx(-50.0)


@given(st.floats(1e-3, 1e9), st.floats(1e-3, 1e9), st.floats(1e-6, 1.0))
def test_etr_identity_property(a, s, tau):
    e = etr_comparison(a, s, tau)
    assert math.isclose(e.assessment_pct_error, e.rate_pct_error, rel_tol=1e-12, abs_tol=1e-9)


@given(st.lists(st.tuples(st.floats(1.0, 1e6), st.floats(1.0, 1e6)), min_size=3, max_size=30),
       st.floats(0.01, 100.0))
def test_scale_invariance(pairs, k):
    a = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs])
    if np.ptp(np.log(s)) < 1e-3:
        return
    base, scaled = RatioData.from_arrays(a, s), RatioData.from_arrays(a * k, s * k)
    assert mape(scaled) == pytest.approx(mape(base), rel=1e-9, abs=1e-9)
    assert prd(scaled) == pytest.approx(prd(base), rel=1e-9)
    assert suits_index(scaled) == pytest.approx(suits_index(base), rel=1e-7, abs=1e-9)
    assert log_coefficient(scaled)[0] == pytest.approx(log_coefficient(base)[0], rel=1e-6, abs=1e-7)
    assert rmse(scaled) == pytest.approx(k * rmse(base), rel=1e-9)
    assert mae(scaled) == pytest.approx(k * mae(base), rel=1e-9)


@given(st.lists(st.floats(10.0, 1e6), min_size=3, max_size=40, unique=True), st.floats(0.1, 10.0))
def test_proportional_fixed_point(prices, c):
    s = np.array(prices)
    d = RatioData.from_arrays(c * s, s)
    assert prd(d) == pytest.approx(1.0, abs=1e-9)
    assert suits_index(d) == pytest.approx(0.0, abs=1e-9)
    if np.ptp(np.log(s)) > 1e-3:
        assert log_coefficient(d)[0] == pytest.approx(0.0, abs=1e-9)


def test_kernels_batch_over_last_axis():
    rng = np.random.default_rng(2)
    s = rng.lognormal(12, 0.5, (4, 60))
    a = s * rng.lognormal(0, 0.2, (4, 60))
    for name, kernel in KERNELS.items():
        batch = kernel(a, s)
        for i in range(4):
            assert batch[i] == pytest.approx(float(kernel(a[i], s[i])), rel=1e-12, abs=1e-12)


def test_reports():
    s = np.array([100.0, 200.0, 400.0, 800.0])
    acc = accuracy_report(RatioData.from_arrays(s, s))
    assert acc.mape == 0 and acc.n == 4
    reg = regressivity_report(RatioData.from_arrays(s**0.9, s))
    assert reg.log_coefficient == pytest.approx(-0.1)
    assert reg.prd > 1 and -1 <= reg.suits_index < 0
