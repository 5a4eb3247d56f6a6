"""Market models whose wealth equation has the asymmetric-premium form.

Each model is written in its native terms (drifts, price impact, tax rate)
and maps onto :class:`MarketParams` through its long and short premia:

* long/short drifts:  ``theta_low = (b_low - r) / sigma``,
  ``theta_high = (b_high - r) / sigma``;
* large investor with price impact ``eps``:  ``(b - r -/+ eps) / sigma``;
* tax rate ``alpha`` on stock gains:  ``theta_low = (1 - alpha)(b - r) / sigma``,
  ``theta_high = (b - r) / sigma``.

Curves with different sample grids are combined on the union grid; when
any input is piecewise linear the union grid is refined to steps of at
most ``1e-3 * T`` and the quotient is sampled there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .errors import ConfigError, DegenerateSigma, NegativePremium, ValidationError
from .market import (PIECEWISE_CONSTANT, PIECEWISE_LINEAR, REFINE_FRACTION, SIGMA_FLOOR,
                     CoefficientCurve, MarketParams, as_curve, check_format, curve_from_json,
                     curve_to_json)


def _combine(curves, horizon):
    linear = any(c.interpolation == PIECEWISE_LINEAR for c in curves)
    grid = np.unique(np.concatenate([c.times for c in curves]))
    if linear:
        step = REFINE_FRACTION * horizon
        pieces = [grid[:1]]
        for a, b in zip(grid[:-1], grid[1:]):
            m = max(1, math.ceil((b - a) / step - 1e-9))
            pieces.append(np.linspace(a, b, m + 1)[1:])
        grid = np.concatenate(pieces)
    return grid, (PIECEWISE_LINEAR if linear else PIECEWISE_CONSTANT), [np.atleast_1d(c(grid)) for c in curves]


def _curve(grid, values, interpolation):
    return CoefficientCurve(tuple(zip(grid.tolist(), np.asarray(values, dtype=float).tolist())), interpolation)


def _check_sigma(grid, sigma):
    bad = np.flatnonzero(np.abs(sigma) < SIGMA_FLOOR)
    if bad.size:
        raise DegenerateSigma(f"|sigma| < {SIGMA_FLOOR:g} at t={grid[bad[0]]:g}")
    bad = np.flatnonzero(sigma < 0.0)
    if bad.size:
        raise DegenerateSigma(f"sigma must be positive, got {sigma[bad[0]]:g} at t={grid[bad[0]]:g}")


def _check_nonnegative(grid, values, what):
    bad = np.flatnonzero(~(values >= 0.0))
    if bad.size:
        raise NegativePremium(f"{what} must be >= 0, got {values[bad[0]]:g} at t={grid[bad[0]]:g}")


class _Model:
    kind = ""

    def __post_init__(self):
        T = float(self.horizon)
        if not (math.isfinite(T) and T > 0):
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "horizon", T)
        for f in fields(self):
            if f.name in self._curve_fields:
                object.__setattr__(self, f.name, as_curve(getattr(self, f.name), T))

    @classmethod
    def from_dict(cls, obj: Mapping):
        if not isinstance(obj, Mapping):
            raise ConfigError(f"{cls.kind} parameters must be a JSON object")
        check_format(obj)
        names = [f.name for f in fields(cls)]
        unknown = set(obj) - set(names) - {"format"}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)} for model {cls.kind!r}")
        for name in names:
            if name not in obj:
                raise ConfigError(f"missing key '{name}' for model {cls.kind!r}")
        horizon = obj["horizon"]
        if isinstance(horizon, bool) or not isinstance(horizon, (int, float)):
            raise ConfigError(f"horizon: expected a number, got {horizon!r}")
        kw = {}
        for name in names:
            if name in cls._curve_fields:
                kw[name] = curve_from_json(obj[name], float(horizon), name)
            else:
                val = obj[name]
                if isinstance(val, bool) or not isinstance(val, (int, float)):
                    raise ConfigError(f"{name}: expected a number, got {val!r}")
                kw[name] = float(val)
        try:
            return cls(**kw)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None

    def as_dict(self):
        out = {"format": 1}
        for f in fields(self):
            val = getattr(self, f.name)
            out[f.name] = curve_to_json(val) if isinstance(val, CoefficientCurve) else val
        return out


@dataclass(frozen=True)
class LongShortModel(_Model):
    """Stock drift ``b_low`` while held long and ``b_high`` while shorted."""

    r: CoefficientCurve
    b_low: CoefficientCurve
    b_high: CoefficientCurve
    sigma: CoefficientCurve
    horizon: float

    kind = "long-short"
    _curve_fields = ("r", "b_low", "b_high", "sigma")

    def native_drift(self, t, x, pi):
        b = np.where(np.asarray(pi) >= 0.0, self.b_low(t), self.b_high(t))
        return self.r(t) * x + (b - self.r(t)) * pi


@dataclass(frozen=True)
class LargeInvestorModel(_Model):
    """Holding the stock long lowers its drift by ``epsilon``, shorting raises it."""

    r: CoefficientCurve
    b: CoefficientCurve
    sigma: CoefficientCurve
    epsilon: float
    horizon: float

    kind = "large-investor"
    _curve_fields = ("r", "b", "sigma")

    def __post_init__(self):
        super().__post_init__()
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")

    def native_drift(self, t, x, pi):
        return self.r(t) * x + (self.b(t) - self.r(t)) * pi - self.epsilon * np.abs(pi)


@dataclass(frozen=True)
class TaxedModel(_Model):
    """A fraction ``alpha`` of the excess return on long positions is taxed away."""

    r: CoefficientCurve
    b: CoefficientCurve
    sigma: CoefficientCurve
    alpha: float
    horizon: float

    kind = "taxes"
    _curve_fields = ("r", "b", "sigma")

    def __post_init__(self):
        super().__post_init__()
        if not (math.isfinite(self.alpha) and 0.0 <= self.alpha < 1.0):
            raise ValidationError(f"alpha must lie in [0, 1), got {self.alpha}")

    def native_drift(self, t, x, pi):
        excess = self.b(t) - self.r(t)
        return self.r(t) * x + excess * pi - self.alpha * np.maximum(pi, 0.0) * excess


def from_long_short_premia(model: LongShortModel) -> MarketParams:
    grid, interp, (r, b_lo, b_hi, sigma) = _combine(
        (model.r, model.b_low, model.b_high, model.sigma), model.horizon)
    _check_sigma(grid, sigma)
    _check_nonnegative(grid, b_lo - r, "b_low - r")
    _check_nonnegative(grid, b_hi - r, "b_high - r")
    return MarketParams(
        _curve(grid, r, interp),
        _curve(grid, (b_lo - r) / sigma, interp),
        _curve(grid, (b_hi - r) / sigma, interp),
        _curve(grid, sigma, interp),
        model.horizon,
    )


def from_large_investor(model: LargeInvestorModel) -> MarketParams:
    grid, interp, (r, b, sigma) = _combine((model.r, model.b, model.sigma), model.horizon)
    _check_sigma(grid, sigma)
    eps = model.epsilon
    _check_nonnegative(grid, b - r - eps, "b - r - epsilon")
    return MarketParams(
        _curve(grid, r, interp),
        _curve(grid, (b - r - eps) / sigma, interp),
        _curve(grid, (b - r + eps) / sigma, interp),
        _curve(grid, sigma, interp),
        model.horizon,
    )


def from_taxes(model: TaxedModel) -> MarketParams:
    grid, interp, (r, b, sigma) = _combine((model.r, model.b, model.sigma), model.horizon)
    _check_sigma(grid, sigma)
    _check_nonnegative(grid, b - r, "b - r")
    alpha = model.alpha
    return MarketParams(
        _curve(grid, r, interp),
        _curve(grid, (1.0 - alpha) * (b - r) / sigma, interp),
        _curve(grid, (b - r) / sigma, interp),
        _curve(grid, sigma, interp),
        model.horizon,
    )


MODELS = {
    LongShortModel.kind: (LongShortModel, from_long_short_premia),
    LargeInvestorModel.kind: (LargeInvestorModel, from_large_investor),
    TaxedModel.kind: (TaxedModel, from_taxes),
}


def market_from_model(kind: str, obj: Mapping) -> MarketParams:
    """Parse a model's JSON parameters and map them to :class:`MarketParams`."""
    if kind not in MODELS:
        raise ConfigError(f"unknown model {kind!r}; expected one of {sorted(MODELS)}")
    cls, build = MODELS[kind]
    model = cls.from_dict(obj)
    try:
        return build(model)
    except ValidationError as exc:
        raise ConfigError(f"model {kind!r}: {exc}") from None
