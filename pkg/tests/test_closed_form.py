import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvnonlinear.closed_form import (Region, dual_objective, efficient_frontier_variance, feedback_policy,
                                     frontier_sweep, lagrange_d_star, policy_array, threshold, value_function)
from mvnonlinear.errors import DegenerateFrontier, DegenerateSigma, InfeasibleTarget
from mvnonlinear.market import CoefficientCurve, MarketParams, ProblemSpec

E = math.exp


def oracle_value(t, x, d, r=0.05, lo=0.2, hi=0.3, T=1.0):
    # constant coefficients, written out by hand
    tau = T - t
    theta = lo if x <= d * E(-r * tau) else hi
    return E(-theta**2 * tau) * (x * E(r * tau) - d) ** 2


def test_terminal_condition(market):
    assert value_function(market, 1.0, 1.0, 1.2) == pytest.approx(0.04, rel=1e-15)
    x = np.linspace(-3, 3, 61)
    assert np.array_equal(value_function(market, 1.0, x, 0.7), (x - 0.7) ** 2)


def test_value_vanishes_on_threshold(market):
    for t in (0.0, 0.3, 0.9):
        c = threshold(market, t, 1.3)
        assert value_function(market, t, c, 1.3) == pytest.approx(0.0, abs=1e-28)


def test_constants_value(market):
    assert value_function(market, 0.0, 1.0, 1.3) == pytest.approx(E(-0.04) * (E(0.05) - 1.3) ** 2, rel=1e-14)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 5), st.floats(-3, 5))
def test_value_matches_oracle(market, t, x, d):
    assert value_function(market, t, x, d) == pytest.approx(oracle_value(t, x, d), rel=1e-12, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 5), st.floats(1e-3, 2), st.floats(-3, 5))
def test_nonnegative_and_convex(market, t, x, h, d):
    v = lambda y: value_function(market, t, y, d)
    assert v(x) >= 0
    assert v(x - h) + v(x + h) >= 2 * v(x) - 1e-12 * max(1.0, v(x))


def test_continuity_across_threshold(market):
    t, d = 0.2, 1.3
    c = threshold(market, t, d)
    for eps in (1e-2, 1e-3, 1e-4):
        for side in (-1, 1):
            # quadratic decay: v / eps^2 stays bounded
            assert value_function(market, t, c + side * eps, d) / eps**2 < 2 * E(2 * 0.05)


def one_sided_second_differences(params, t, d, h):
    c = threshold(params, t, d)
    v = lambda y: value_function(params, t, y, d)
    left = (v(c) - 2 * v(c - h) + v(c - 2 * h)) / h**2
    right = (v(c + 2 * h) - 2 * v(c + h) + v(c)) / h**2
    return left, right


def test_second_derivative_jump(market):
    t, d = 0.0, 1.3
    left, right = one_sided_second_differences(market, t, d, 1e-4)
    assert left == pytest.approx(2 * E(2 * 0.05 - 0.04), rel=1e-2)
    assert right == pytest.approx(2 * E(2 * 0.05 - 0.09), rel=1e-2)
    assert abs(left - right) > 0.05


def test_linear_market_is_smooth():
    params = MarketParams.constant(r=0.05, theta_low=0.25, theta_high=0.25, sigma=0.3)
    left, right = one_sided_second_differences(params, 0.0, 1.3, 1e-4)
    assert left == pytest.approx(right, rel=1e-5)


def test_feedback_policy_examples(market):
    c = 1.3 * E(-0.05)
    below = feedback_policy(market, 0.0, 1.0, 1.3)
    assert below.region is Region.LONG
    assert below.pi == pytest.approx(-(0.2 / 0.3) * (1.0 - c), rel=1e-14)
    above = feedback_policy(market, 0.0, 1.5, 1.3)
    assert above.region is Region.SHORT
    assert above.pi == pytest.approx(-(0.3 / 0.3) * (1.5 - c), rel=1e-14)
    at = feedback_policy(market, 0.0, c, 1.3)
    assert at.region is Region.BOUNDARY
    assert at.pi == 0.0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 5), st.floats(-3, 5))
def test_policy_sign(market, t, x, d):
    pi = feedback_policy(market, t, x, d).pi
    assert (pi >= 0) == (x <= threshold(market, t, d))


def test_policy_array_matches_scalar(market):
    t = np.linspace(0, 1, 7)[:, None]
    x = np.linspace(-1, 3, 9)[None, :]
    arr = policy_array(market, t, x, 1.3)
    for i in range(7):
        for j in range(9):
            assert arr[i, j] == feedback_policy(market, t[i, 0], x[0, j], 1.3).pi


def test_policy_degenerate_sigma():
    params = MarketParams.constant(r=0.05, theta_low=0.2, theta_high=0.3, sigma=0.0)
    with pytest.raises(DegenerateSigma):
        policy_array(params, 0.0, 1.0, 1.3)


def test_d_star_at_vertex(market):
    spec = ProblemSpec(1.0, E(0.05), market)
    aux = lagrange_d_star(market, spec)
    assert aux.d == spec.K and aux.lam == 0.0


def test_d_star_constants(market):
    spec = ProblemSpec(1.0, 1.2, market)
    aux = lagrange_d_star(market, spec)
    assert aux.d == pytest.approx((1.2 - E(0.05 - 0.04)) / (1 - E(-0.04)), rel=1e-13)
    assert aux.lam == pytest.approx(aux.d - 1.2, rel=1e-13)
    assert aux.lam >= 0


def test_d_star_maximises_dual_by_grid_search(market):
    spec = ProblemSpec(1.0, 1.2, market)
    grid = np.linspace(1.2, 1.2 + 50, 200_001)
    best = grid[np.argmax(dual_objective(market, spec, grid))]
    step = grid[1] - grid[0]
    assert abs(best - lagrange_d_star(market, spec).d) <= step


def test_degenerate_frontier():
    params = MarketParams.constant(r=0.05, theta_low=0.0, theta_high=0.3, sigma=0.3)
    with pytest.raises(DegenerateFrontier):
        lagrange_d_star(params, ProblemSpec(1.0, 1.2, params))
    # the vertex stays well defined
    assert efficient_frontier_variance(params, ProblemSpec(1.0, E(0.05), params)).variance == 0.0


def test_frontier_constants(market):
    point = efficient_frontier_variance(market, ProblemSpec(1.0, 1.2, market))
    assert point.variance == pytest.approx((1.2 - E(0.05)) ** 2 / (E(0.04) - 1), rel=1e-13)
    assert point.std_dev == pytest.approx(math.sqrt(point.variance))
    assert point.variance == pytest.approx(dual_objective(market, ProblemSpec(1.0, 1.2, market), point.d_star), rel=1e-10)


def test_frontier_uses_only_long_premium():
    a = MarketParams.constant(r=0.05, theta_low=0.2, theta_high=0.3, sigma=0.3)
    b = MarketParams.constant(r=0.05, theta_low=0.2, theta_high=0.9, sigma=0.3)
    pa = efficient_frontier_variance(a, ProblemSpec(1.0, 1.3, a))
    pb = efficient_frontier_variance(b, ProblemSpec(1.0, 1.3, b))
    assert pa == pb


def test_time_dependent_frontier():
    r = CoefficientCurve(((0.0, 0.02), (0.5, 0.06), (1.0, 0.06)))
    lo = CoefficientCurve(((0.0, 0.1), (0.25, 0.3), (1.0, 0.3)))
    params = MarketParams(r, lo, 0.5, 0.2, 1.0)
    R = 0.5 * 0.02 + 0.5 * 0.06
    L = 0.25 * 0.01 + 0.75 * 0.09
    point = efficient_frontier_variance(params, ProblemSpec(2.0, 2.5, params))
    assert point.variance == pytest.approx((2.5 - 2 * E(R)) ** 2 / (E(L) - 1), rel=1e-12)
    assert point.d_star == pytest.approx((2.5 - 2 * E(R - L)) / (1 - E(-L)), rel=1e-12)


def test_sweep(market):
    vertex = E(0.05)
    assert [p.variance for p in frontier_sweep(market, 1.0, [vertex])] == [0.0]
    h = 0.05
    pts = frontier_sweep(market, 1.0, [vertex + k * h for k in range(5)])
    base = pts[1].variance
    assert [p.variance / base for p in pts] == pytest.approx([0, 1, 4, 9, 16], rel=1e-9)
    for K, p in zip((1.1, 1.2, 1.3), frontier_sweep(market, 1.0, [1.1, 1.2, 1.3])):
        assert p == efficient_frontier_variance(market, ProblemSpec(1.0, K, market))


def test_sweep_names_failing_target(market):
    with pytest.raises(InfeasibleTarget) as info:
        frontier_sweep(market, 1.0, [1.2, 0.9])
    assert info.value.K == 0.9
    assert "K=0.9" in str(info.value)
