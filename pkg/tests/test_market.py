import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvnonlinear.errors import ConfigError, InfeasibleTarget, InvalidMarket, OutOfDomain, ValidationError
from mvnonlinear.market import (PIECEWISE_LINEAR, CoefficientCurve, MarketParams, ProblemSpec,
                                curve_from_json, discount_factor, integrate_curve, market_from_dict,
                                market_to_dict, require_valid, validate_market)


def riemann(f, a, b, n=200_000):
    # midpoint rule oracle
    if a == b:
        return 0.0
    s = np.linspace(a, b, n + 1)
    mid = 0.5 * (s[1:] + s[:-1])
    return float(np.sum(f(mid)) * (b - a) / n)


STEP = CoefficientCurve(((0.0, 0.2), (0.5, 0.4), (1.0, 0.4)))
RAMP = CoefficientCurve(((0.0, 0.1), (0.3, 0.5), (1.0, 0.2)), PIECEWISE_LINEAR)


def test_constant_identity_integral():
    assert integrate_curve(CoefficientCurve.constant(0.05, 1.0), "identity", 0.0, 1.0) == pytest.approx(0.05, rel=1e-15)


@pytest.mark.parametrize("transform", ["identity", "square"])
@pytest.mark.parametrize("curve", [STEP, RAMP])
def test_empty_interval_is_zero(curve, transform):
    assert integrate_curve(curve, transform, 0.3, 0.3) == 0.0


def test_step_curve_square_integral():
    assert integrate_curve(STEP, "square", 0.0, 1.0) == pytest.approx(0.5 * 0.04 + 0.5 * 0.16, rel=1e-14)
    assert integrate_curve(STEP, "square", 0.0, 1.0) == pytest.approx(riemann(lambda s: STEP(s) ** 2, 0, 1), rel=1e-5)


def test_piecewise_constant_is_left_continuous():
    assert STEP(0.4999) == 0.2
    assert STEP(0.5) == 0.4
    assert STEP(1.0) == 0.4


@pytest.mark.parametrize("transform,f", [("identity", lambda v: v), ("square", lambda v: v * v)])
def test_linear_curve_matches_riemann(transform, f):
    for a, b in [(0.0, 1.0), (0.1, 0.7), (0.29, 0.31)]:
        expected = riemann(lambda s: f(RAMP(s)), a, b)
        # trapezoid on steps of 1e-3 T: O(h^2) for the square, exact for identity
        assert integrate_curve(RAMP, transform, a, b) == pytest.approx(expected, rel=1e-5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=3, max_size=3),
       st.sampled_from(["identity", "square"]))
def test_additivity_on_sample_grid(ts, transform):
    t0, t1, t2 = sorted(ts)
    curve = CoefficientCurve(((0.0, 0.3), (0.25, -0.1), (0.5, 0.7), (0.75, 0.2), (1.0, 0.5)))
    whole = integrate_curve(curve, transform, t0, t2)
    parts = integrate_curve(curve, transform, t0, t1) + integrate_curve(curve, transform, t1, t2)
    assert parts == pytest.approx(whole, rel=1e-12, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_square_integral_monotone_in_upper_limit(a, b):
    lo, hi = sorted((a, b))
    for curve in (STEP, RAMP):
        assert integrate_curve(curve, "square", 0.0, hi) >= integrate_curve(curve, "square", 0.0, lo)


def test_piecewise_constant_exact_sum():
    times = [0.0, 0.1, 0.35, 0.6, 1.0]
    vals = [0.3, 0.1, 0.25, 0.05, 0.05]
    curve = CoefficientCurve(tuple(zip(times, vals)))
    exact = sum(v * v * (b - a) for a, b, v in zip(times[:-1], times[1:], vals[:-1]))
    assert integrate_curve(curve, "square", 0.0, 1.0) == pytest.approx(exact, rel=1e-14)


def test_integral_outside_horizon_rejected():
    with pytest.raises(OutOfDomain):
        integrate_curve(STEP, "identity", 0.0, 1.5)
    with pytest.raises(OutOfDomain):
        STEP(-0.1)


def test_reversed_limits_rejected():
    with pytest.raises(OutOfDomain):
        integrate_curve(RAMP, "identity", 0.8, 0.2)


@pytest.mark.parametrize("samples", [((0.0, 1.0),), ((0.1, 1.0), (1.0, 1.0)), ((0.0, 1.0), (0.5, 1.0), (0.5, 2.0)),
                                     ((0.0, float("nan")), (1.0, 1.0))])
def test_bad_samples_rejected(samples):
    with pytest.raises(ValidationError):
        CoefficientCurve(samples)


def test_discount_factor(market):
    assert discount_factor(market, 1.0) == 1.0
    assert discount_factor(market, 0.0) == pytest.approx(math.exp(-0.05), rel=1e-15)
    zero = MarketParams.constant(r=0.0, theta_low=0.2, theta_high=0.3, sigma=0.3)
    assert np.all(discount_factor(zero, np.linspace(0, 1, 11)) == 1.0)


def test_discount_factor_monotone_for_nonnegative_rate():
    r = CoefficientCurve(((0.0, 0.02), (0.4, 0.0), (0.7, 0.09), (1.0, 0.09)))
    params = MarketParams(r, 0.2, 0.3, 0.3, 1.0)
    df = discount_factor(params, np.linspace(0, 1, 501))
    assert np.all(np.diff(df) >= 0)


def test_validate_clean_market(market):
    assert validate_market(market) == []
    assert require_valid(market) is market


def test_validate_negative_theta_low():
    report = validate_market(MarketParams.constant(r=0.05, theta_low=-0.1, theta_high=0.3, sigma=0.3))
    assert {v.rule for v in report} == {"theta_low_nonnegative"}
    assert {v.curve for v in report} == {"theta_low"}


def test_validate_zero_sigma_sample():
    sigma = CoefficientCurve(((0.0, 0.3), (0.5, 0.0), (1.0, 0.3)))
    report = validate_market(MarketParams(0.05, 0.2, 0.3, sigma, 1.0))
    assert len(report) == 1
    assert report[0].rule == "sigma_nonzero"
    assert report[0].time == 0.5
    with pytest.raises(InvalidMarket):
        require_valid(MarketParams(0.05, 0.2, 0.3, sigma, 1.0))


def test_validate_negative_sigma():
    report = validate_market(MarketParams.constant(r=0.05, theta_low=0.2, theta_high=0.3, sigma=-0.3))
    assert {v.rule for v in report} == {"sigma_positive"}


def test_curve_must_span_horizon():
    with pytest.raises(ValidationError):
        MarketParams(CoefficientCurve.constant(0.05, 2.0), 0.2, 0.3, 0.3, 1.0)


def test_problem_spec_vertex(market):
    spec = ProblemSpec(1.0, math.exp(0.05), market)
    assert spec.at_vertex
    assert ProblemSpec(1.0, math.exp(0.05) * (1 - 1e-14), market).at_vertex
    with pytest.raises(InfeasibleTarget):
        ProblemSpec(1.0, 1.0, market)


def test_drift_decomposition(market):
    assert market.drift(0.0, 1.0, 2.0) == pytest.approx(0.05 + 2.0 * 0.3 * 0.2)
    assert market.drift(0.0, 1.0, -2.0) == pytest.approx(0.05 - 2.0 * 0.3 * 0.3)
    assert market.drift(0.0, 1.0, 0.0) == pytest.approx(0.05)


def test_json_round_trip():
    params = MarketParams(0.05, STEP, RAMP, 0.3, 1.0)
    back = market_from_dict(market_to_dict(params))
    assert back == params


def test_json_errors_name_key():
    with pytest.raises(ConfigError, match="sigma"):
        market_from_dict({"r": 0.05, "theta_low": 0.2, "theta_high": 0.3, "horizon": 1})
    with pytest.raises(ConfigError, match="unsupported version"):
        market_from_dict({"format": 2, "r": 0.05, "theta_low": 0.2, "theta_high": 0.3, "sigma": 0.3, "horizon": 1})
    with pytest.raises(ConfigError, match="bogus"):
        market_from_dict({"r": 0.05, "theta_low": 0.2, "theta_high": 0.3, "sigma": 0.3, "horizon": 1, "bogus": 1})
    with pytest.raises(ConfigError, match="theta_high"):
        curve_from_json({"samples": [[0, 1]]}, 1.0, "theta_high")
