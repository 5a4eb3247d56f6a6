"""Deterministic market coefficients and the problem data built on them.

The wealth equation is driven by four deterministic curves on ``[0, T]``:
the riskless rate ``r``, the long-side premium ``theta_low``, the
short-side premium ``theta_high`` and the volatility ``sigma``.  Every
closed-form quantity in the package only needs a handful of time
integrals of these curves, so the curves precompute cumulative tables
once at construction and answer integrals by table lookup.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, InfeasibleTarget, InvalidMarket, OutOfDomain, ValidationError

PIECEWISE_CONSTANT = "piecewise-constant-left"
PIECEWISE_LINEAR = "piecewise-linear"
INTERPOLATIONS = (PIECEWISE_CONSTANT, PIECEWISE_LINEAR)
TRANSFORMS = ("identity", "square")

SIGMA_FLOOR = 1e-10
# max sub-step of the trapezoid refinement, as a fraction of the horizon
REFINE_FRACTION = 1e-3
FORMAT_VERSION = 1
CURVE_NAMES = ("r", "theta_low", "theta_high", "sigma")


def _transform(values, transform):
    if transform == "identity":
        return values
    if transform == "square":
        return values * values
    raise ValueError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")


@dataclass(frozen=True)
class CoefficientCurve:
    """A deterministic function of time sampled on ``[0, T]``.

    Parameters
    ----------
    samples : sequence of (time, value) pairs
        Strictly increasing times, starting at 0 and ending at the horizon.
    interpolation : {"piecewise-constant-left", "piecewise-linear"}
        With ``piecewise-constant-left`` the value on ``[t_k, t_{k+1})`` is
        the value sampled at ``t_k``; all integrals are then exact sums.
    """

    samples: tuple[tuple[float, float], ...]
    interpolation: str = PIECEWISE_CONSTANT
    _times: np.ndarray = field(init=False, repr=False, compare=False)
    _values: np.ndarray = field(init=False, repr=False, compare=False)
    _tables: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            pairs = tuple((float(t), float(v)) for t, v in self.samples)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"curve samples must be (time, value) pairs: {exc}") from None
        if self.interpolation not in INTERPOLATIONS:
            raise ValidationError(
                f"unknown interpolation {self.interpolation!r}; expected one of {INTERPOLATIONS}"
            )
        if len(pairs) < 2:
            raise ValidationError("a curve needs at least two samples (t=0 and t=T)")
        times = np.array([p[0] for p in pairs])
        values = np.array([p[1] for p in pairs])
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValidationError("curve samples must be finite")
        if times[0] != 0.0:
            raise ValidationError(f"first sample time must be 0, got {times[0]}")
        if np.any(np.diff(times) <= 0.0):
            raise ValidationError("sample times must be strictly increasing")
        object.__setattr__(self, "samples", pairs)
        object.__setattr__(self, "_times", times)
        object.__setattr__(self, "_values", values)
        object.__setattr__(self, "_tables", {t: self._build_table(t) for t in TRANSFORMS})

    @classmethod
    def constant(cls, value: float, horizon: float) -> "CoefficientCurve":
        return cls(((0.0, value), (horizon, value)))

    @property
    def horizon(self) -> float:
        return float(self._times[-1])

    @property
    def times(self) -> np.ndarray:
        return self._times.copy()

    @property
    def values(self) -> np.ndarray:
        return self._values.copy()

    def _check_domain(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > self.horizon):
            raise OutOfDomain(f"time outside [0, {self.horizon}]: {t}")
        return t

    def _segment(self, t):
        idx = np.searchsorted(self._times, t, side="right") - 1
        return np.clip(idx, 0, len(self._times) - 1)

    def __call__(self, t):
        t = self._check_domain(t)
        if self.interpolation == PIECEWISE_CONSTANT:
            out = self._values[self._segment(t)]
        else:
            out = np.interp(t, self._times, self._values)
        return out if out.ndim else float(out)

    def _build_table(self, transform):
        # Table holds knots, transformed knot values, slopes and the running
        # integral at each knot; the integrand between knots is constant or
        # linear so the antiderivative is evaluated in closed form.
        if self.interpolation == PIECEWISE_CONSTANT:
            knots = self._times
            g = _transform(self._values, transform)
            slopes = np.zeros_like(g)
            widths = np.diff(knots)
            cum = np.concatenate(([0.0], np.cumsum(g[:-1] * widths)))
        else:
            step = REFINE_FRACTION * self.horizon
            pieces = [self._times[:1]]
            for a, b in zip(self._times[:-1], self._times[1:]):
                m = max(1, math.ceil((b - a) / step - 1e-9))
                pieces.append(np.linspace(a, b, m + 1)[1:])
            knots = np.concatenate(pieces)
            g = _transform(np.interp(knots, self._times, self._values), transform)
            widths = np.diff(knots)
            slopes = np.concatenate((np.diff(g) / widths, [0.0]))
            cum = np.concatenate(([0.0], np.cumsum(0.5 * (g[:-1] + g[1:]) * widths)))
        return knots, g, slopes, cum

    def antiderivative(self, t, transform: str = "identity"):
        """Return ``int_0^t f(curve(s)) ds`` for scalar or array ``t``."""
        t = self._check_domain(t)
        knots, g, slopes, cum = self._tables[transform]
        idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, len(knots) - 1)
        h = t - knots[idx]
        out = cum[idx] + g[idx] * h + 0.5 * slopes[idx] * h * h
        return out if np.ndim(out) else float(out)


def integrate_curve(curve: CoefficientCurve, transform: str, t0, t1):
    """Integral of ``transform(curve)`` over ``[t0, t1]``.

    Exact for piecewise-constant curves.  Piecewise-linear curves use a
    composite trapezoid rule on the sample grid refined to steps of at most
    ``1e-3 * T``, which is exact for the identity transform.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")
    t0a = np.asarray(t0, dtype=float)
    t1a = np.asarray(t1, dtype=float)
    if np.any(t0a < 0.0) or np.any(t1a > curve.horizon) or np.any(t0a > t1a):
        raise OutOfDomain(f"need 0 <= t0 <= t1 <= {curve.horizon}, got t0={t0}, t1={t1}")
    out = np.where(
        t0a == t1a,
        0.0,
        np.asarray(curve.antiderivative(t1a, transform)) - np.asarray(curve.antiderivative(t0a, transform)),
    )
    return out if out.ndim else float(out)


def as_curve(value, horizon: float) -> CoefficientCurve:
    if isinstance(value, CoefficientCurve):
        return value
    return CoefficientCurve.constant(float(value), horizon)


@dataclass(frozen=True)
class MarketParams:
    """Coefficient curves of the wealth equation plus the horizon.

    Scalars are accepted in place of curves and promoted to constants.
    Construction only checks that the curves span ``[0, T]``; the sign
    conditions on the premia and volatility are reported by
    :func:`validate_market` and enforced by the solvers.
    """

    r: CoefficientCurve
    theta_low: CoefficientCurve
    theta_high: CoefficientCurve
    sigma: CoefficientCurve
    horizon: float

    def __post_init__(self):
        T = float(self.horizon)
        if not (math.isfinite(T) and T > 0.0):
            raise ValidationError(f"horizon must be positive and finite, got {self.horizon}")
        object.__setattr__(self, "horizon", T)
        for name in CURVE_NAMES:
            curve = as_curve(getattr(self, name), T)
            if abs(curve.horizon - T) > 1e-12 * T:
                raise ValidationError(
                    f"curve {name!r} ends at {curve.horizon}, expected the horizon {T}"
                )
            object.__setattr__(self, name, curve)

    @classmethod
    def constant(cls, r=0.0, theta_low=0.0, theta_high=0.0, sigma=1.0, horizon=1.0):
        return cls(r, theta_low, theta_high, sigma, horizon)

    def curves(self) -> dict[str, CoefficientCurve]:
        return {name: getattr(self, name) for name in CURVE_NAMES}

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > self.horizon):
            raise OutOfDomain(f"time outside [0, {self.horizon}]: {t}")
        return t

    def tail_integral(self, name: str, transform: str, t):
        """``int_t^T`` of ``transform(curve)``; vectorised over ``t``."""
        t = self._check_time(t)
        return integrate_curve(getattr(self, name), transform, t, np.full_like(t, self.horizon))

    def tail_exponents(self, t):
        """Return ``(int_t^T r, int_t^T theta_low^2, int_t^T theta_high^2)``."""
        return (
            self.tail_integral("r", "identity", t),
            self.tail_integral("theta_low", "square", t),
            self.tail_integral("theta_high", "square", t),
        )

    def total_rate(self) -> float:
        return self.tail_integral("r", "identity", 0.0)

    def riskless_growth(self, x0: float) -> float:
        """Terminal wealth of ``x0`` held in the riskless asset."""
        return x0 * math.exp(self.total_rate())

    def coefficients(self, t):
        """Evaluate ``(r, theta_low, theta_high, sigma)`` at ``t``."""
        t = self._check_time(t)
        return tuple(getattr(self, name)(t) for name in CURVE_NAMES)

    def drift(self, t, x, pi):
        """Wealth drift ``r x + pi^+ sigma theta_low - pi^- sigma theta_high``."""
        r, lo, hi, sigma = self.coefficients(t)
        pi = np.asarray(pi, dtype=float)
        return r * np.asarray(x, dtype=float) + np.maximum(pi, 0.0) * sigma * lo - np.maximum(-pi, 0.0) * sigma * hi


def discount_factor(params: MarketParams, t):
    """``exp(-int_t^T r ds)``: value at ``t`` of one unit paid at ``T``."""
    out = np.exp(-np.asarray(params.tail_integral("r", "identity", t)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Violation:
    curve: str
    time: float
    rule: str
    message: str

    def __str__(self):
        return f"{self.curve} at t={self.time:g}: {self.message} [{self.rule}]"

    def as_dict(self):
        return {"curve": self.curve, "time": self.time, "rule": self.rule, "message": self.message}


def validate_market(params: MarketParams, sigma_floor: float = SIGMA_FLOOR) -> list[Violation]:
    """List every sample that breaks the sign conditions on the coefficients.

    Rules: both premia nonnegative, ``|sigma| >= sigma_floor`` and ``sigma``
    positive.  The last rule is stricter than ``sigma != 0``: the explicit
    solution assigns the long-side premium to wealth below the threshold,
    which is only right when long stock exposure means positive ``sigma``.
    """
    report = []
    for name in ("theta_low", "theta_high"):
        curve = getattr(params, name)
        for t, v in curve.samples:
            if not v >= 0.0:
                report.append(
                    Violation(name, t, f"{name}_nonnegative",
                              f"premium must be >= 0, got {v:g}")
                )
    for t, v in params.sigma.samples:
        if abs(v) < sigma_floor:
            report.append(
                Violation("sigma", t, "sigma_nonzero",
                          f"sigma must be nonzero (|sigma| >= {sigma_floor:g}), got {v:g}")
            )
        elif v < 0.0:
            report.append(
                Violation("sigma", t, "sigma_positive", f"sigma must be positive, got {v:g}")
            )
    return report


def require_valid(params: MarketParams) -> MarketParams:
    report = validate_market(params)
    if report:
        raise InvalidMarket(report)
    return params


@dataclass(frozen=True)
class ProblemSpec:
    """Initial wealth ``x0`` and target terminal mean ``K`` in a given market.

    ``K`` must be at least ``x0 * exp(int_0^T r)``; targets within a relative
    ``1e-12`` of that vertex are treated as the vertex itself.
    """

    x0: float
    K: float
    market: MarketParams = field(repr=False)

    def __post_init__(self):
        x0, K = float(self.x0), float(self.K)
        if not (math.isfinite(x0) and math.isfinite(K)):
            raise ValidationError("x0 and K must be finite")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "K", K)
        vertex = self.market.riskless_growth(x0)
        if K < vertex and not self._close(K, vertex):
            raise InfeasibleTarget(
                f"target K={K!r} is below the riskless growth x0*exp(int r)={vertex!r}"
            )

    @staticmethod
    def _close(a, b):
        return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))

    @property
    def vertex(self) -> float:
        return self.market.riskless_growth(self.x0)

    @property
    def at_vertex(self) -> bool:
        return self._close(self.K, self.vertex)


# -- JSON representation -------------------------------------------------------


def curve_to_json(curve: CoefficientCurve):
    values = {v for _, v in curve.samples}
    if len(values) == 1 and len(curve.samples) == 2 and curve.interpolation == PIECEWISE_CONSTANT:
        return curve.samples[0][1]
    return {"interpolation": curve.interpolation, "samples": [list(p) for p in curve.samples]}


def curve_from_json(obj, horizon: float, key: str) -> CoefficientCurve:
    if isinstance(obj, bool):
        raise ConfigError(f"{key}: expected a number or curve object, got a boolean")
    if isinstance(obj, (int, float)):
        return CoefficientCurve.constant(float(obj), horizon)
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{key}: expected a number or curve object, got {type(obj).__name__}")
    unknown = set(obj) - {"interpolation", "samples"}
    if unknown:
        raise ConfigError(f"{key}: unknown keys {sorted(unknown)}")
    if "samples" not in obj:
        raise ConfigError(f"{key}: missing key 'samples'")
    try:
        return CoefficientCurve(
            tuple(tuple(p) for p in obj["samples"]), obj.get("interpolation", PIECEWISE_CONSTANT)
        )
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _number(obj: Mapping, key: str, where: str = "") -> float:
    if key not in obj:
        raise ConfigError(f"{where}missing key '{key}'")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}{key}: expected a number, got {val!r}")
    return float(val)


def check_format(obj: Mapping, where: str = ""):
    version = obj.get("format", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"{where}format: unsupported version {version!r}, expected {FORMAT_VERSION}")


def market_from_dict(obj: Mapping[str, Any]) -> MarketParams:
    """Build :class:`MarketParams` from the JSON market schema (``format: 1``)."""
    if not isinstance(obj, Mapping):
        raise ConfigError("market definition must be a JSON object")
    check_format(obj)
    unknown = set(obj) - {"format", "horizon", *CURVE_NAMES}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    horizon = _number(obj, "horizon")
    curves = {}
    for name in CURVE_NAMES:
        if name not in obj:
            raise ConfigError(f"missing key '{name}'")
        curves[name] = curve_from_json(obj[name], horizon, name)
    try:
        return MarketParams(horizon=horizon, **curves)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def market_to_dict(params: MarketParams) -> dict:
    out = {"format": FORMAT_VERSION, "horizon": params.horizon}
    for name, curve in params.curves().items():
        out[name] = curve_to_json(curve)
    return out
