"""Explicit solution of the mean-variance problem with asymmetric premia.

For a fixed shifted target ``d`` the auxiliary problem ``min E(X_T - d)^2``
has value

    v(t, x; d) = exp(-L(t)) (x e^{R(t)} - d)^2   if x <= d e^{-R(t)}
                 exp(-H(t)) (x e^{R(t)} - d)^2   otherwise

with ``R(t) = int_t^T r``, ``L(t) = int_t^T theta_low^2`` and
``H(t) = int_t^T theta_high^2``.  Below the threshold ``d e^{-R(t)}`` the
investor is long and earns the long-side premium; above it the investor
is short.  Maximising ``v(0, x0; d) - (d - K)^2`` over ``d`` gives the
efficient target ``d*`` and the frontier.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DegenerateFrontier, DegenerateSigma, MVError
from .market import SIGMA_FLOOR, MarketParams, ProblemSpec, discount_factor


class Region(str, enum.Enum):
    LONG = "LONG"
    SHORT = "SHORT"
    BOUNDARY = "BOUNDARY"


@dataclass(frozen=True)
class AuxiliaryTarget:
    """Shifted target ``d = K + lambda`` of the auxiliary problem."""

    d: float
    lam: float


@dataclass(frozen=True)
class PolicyDecision:
    t: float
    x: float
    pi: float
    region: Region


@dataclass(frozen=True)
class FrontierPoint:
    K: float
    variance: float
    d_star: float
    lambda_star: float

    @property
    def std_dev(self) -> float:
        return math.sqrt(self.variance)

    def as_dict(self):
        return {
            "K": self.K,
            "variance": self.variance,
            "std_dev": self.std_dev,
            "d_star": self.d_star,
            "lambda_star": self.lambda_star,
        }


def threshold(params: MarketParams, t, d):
    """Wealth ``d * exp(-int_t^T r)`` separating the long and short regions."""
    return d * discount_factor(params, t)


def value_function(params: MarketParams, t, x, d):
    """Optimal ``E(X_T - d)^2`` starting from wealth ``x`` at time ``t``.

    Broadcasts over array ``t`` and ``x``.  Exactly ``(x - d)^2`` at ``T``.
    """
    R, L, H = params.tail_exponents(t)
    growth = np.exp(R)
    x = np.asarray(x, dtype=float)
    gap = x * growth - d
    below = x <= d * np.exp(-R)
    out = np.where(below, np.exp(-L), np.exp(-H)) * gap * gap
    return out if out.ndim else float(out)


def policy_from_coefficients(x, thr, theta_low, theta_high, sigma):
    """Feedback rule given the threshold and the coefficients at one time."""
    gap = x - thr
    # + 0.0 turns the -0.0 produced exactly at the threshold into 0.0
    return -np.where(gap <= 0.0, theta_low, theta_high) / sigma * gap + 0.0


def policy_array(params: MarketParams, t, x, d):
    """Vectorised optimal amount in stock; zero exactly at the threshold."""
    _, lo, hi, sigma = params.coefficients(t)
    if np.any(np.abs(np.asarray(sigma)) < SIGMA_FLOOR):
        raise DegenerateSigma(f"|sigma| below {SIGMA_FLOOR:g} at t={t}")
    return policy_from_coefficients(np.asarray(x, dtype=float), threshold(params, t, d), lo, hi, sigma)


def feedback_policy(params: MarketParams, t: float, x: float, d: float) -> PolicyDecision:
    """Optimal feedback control at a single ``(t, x)``."""
    thr = threshold(params, t, d)
    pi = float(policy_array(params, t, x, d))
    if x < thr:
        region = Region.LONG
    elif x > thr:
        region = Region.SHORT
    else:
        region = Region.BOUNDARY
        pi = 0.0
    return PolicyDecision(float(t), float(x), pi, region)


def lagrange_d_star(params: MarketParams, spec: ProblemSpec) -> AuxiliaryTarget:
    """Efficient shifted target ``d*`` and multiplier ``lambda* = d* - K``.

    At the vertex ``K = x0 exp(int r)`` the quotient is 0/0 and ``d* = K``.
    """
    if spec.at_vertex:
        return AuxiliaryTarget(spec.K, 0.0)
    long_exp = params.tail_integral("theta_low", "square", 0.0)
    if long_exp <= 0.0:
        raise DegenerateFrontier(
            "integral of theta_low^2 over [0, T] is zero; no finite frontier for K above "
            f"the riskless growth {spec.vertex!r}"
        )
    # d* = (K - x0 e^{R - L}) / (1 - e^{-L}) rewritten so that d* - K >= 0 exactly
    lam = (spec.K - spec.vertex) / math.expm1(long_exp)
    return AuxiliaryTarget(spec.K + lam, lam)


def dual_objective(params: MarketParams, spec: ProblemSpec, d):
    """``v(0, x0; d) - (d - K)^2``, the function maximised by ``d*``."""
    d = np.asarray(d, dtype=float)
    out = value_function(params, 0.0, spec.x0, d) - (d - spec.K) ** 2
    return out if np.ndim(out) else float(out)


def efficient_frontier_variance(params: MarketParams, spec: ProblemSpec) -> FrontierPoint:
    aux = lagrange_d_star(params, spec)
    if spec.at_vertex:
        return FrontierPoint(spec.K, 0.0, aux.d, aux.lam)
    long_exp = params.tail_integral("theta_low", "square", 0.0)
    variance = (spec.K - spec.vertex) ** 2 / math.expm1(long_exp)
    dual = dual_objective(params, spec, aux.d)
    # absolute slack covers cancellation in (x0 e^R - d*)^2 when K is close to the vertex
    scale = max(spec.K * spec.K, aux.d * aux.d)
    if not math.isclose(dual, variance, rel_tol=1e-10, abs_tol=1e-12 * scale):
        raise ArithmeticError(f"dual value {dual!r} disagrees with frontier variance {variance!r}")
    return FrontierPoint(spec.K, variance, aux.d, aux.lam)


def frontier_sweep(params: MarketParams, x0: float, K_values: Iterable[float]) -> list[FrontierPoint]:
    points = []
    for K in K_values:
        try:
            points.append(efficient_frontier_variance(params, ProblemSpec(x0, K, params)))
        except MVError as exc:
            exc.K = K
            exc.args = (f"K={K!r}: {exc}",)
            raise
    return points
