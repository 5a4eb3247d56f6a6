"""Euler-Maruyama simulation of the wealth equation under a feedback rule.

Path ``i`` draws its normals from a Philox generator keyed by
``(seed, i)``.  Philox is counter based, so each key is an independent
stream and a path's increments do not depend on which batch it lands in
or on how batches are scheduled across threads.  Batch statistics are
merged in batch order, which makes the result bit-identical for any
worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .closed_form import (FrontierPoint, efficient_frontier_variance, lagrange_d_star,
                          policy_from_coefficients, threshold)
from .errors import NonFinitePath, ValidationError
from .market import MarketParams, ProblemSpec, require_valid

THREADS_ENV = "MV_NONLINEAR_THREADS"
DEFAULT_BATCH = 8192


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int = 200
    seed: int = 0
    batch_size: int | None = None
    antithetic: bool = False

    def __post_init__(self):
        for name in ("n_paths", "n_steps"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val or val < 1:
                raise ValidationError(f"{name} must be an integer >= 1, got {val!r}")
            object.__setattr__(self, name, int(val))
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))
        if self.batch_size is None:
            object.__setattr__(self, "batch_size", min(self.n_paths, DEFAULT_BATCH))
        b = self.batch_size
        if isinstance(b, bool) or int(b) != b or b < 1:
            raise ValidationError(f"batch_size must be an integer >= 1, got {b!r}")
        if b > self.n_paths:
            raise ValidationError(f"batch_size {b} exceeds n_paths {self.n_paths}")
        object.__setattr__(self, "batch_size", int(b))

    def batches(self):
        return [(i, min(i + self.batch_size, self.n_paths)) for i in range(0, self.n_paths, self.batch_size)]

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class TerminalStats:
    """Streaming moments of terminal wealth.

    ``m2`` is the sum of squared deviations from the mean; batches combine
    with :func:`merge_stats`.
    """

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = math.inf
    max: float = -math.inf

    @classmethod
    def from_samples(cls, x) -> "TerminalStats":
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return cls()
        mean = float(np.mean(x))
        dev = x - mean
        return cls(int(x.size), mean, float(np.dot(dev, dev)), float(x.min()), float(x.max()))

    def variance(self) -> float:
        """Unbiased sample variance; NaN below two samples."""
        return self.m2 / (self.count - 1) if self.count >= 2 else math.nan

    def std_error(self) -> float:
        return math.sqrt(self.variance() / self.count) if self.count >= 2 else math.nan

    def second_moment_about(self, d: float) -> float:
        """Sample ``E(X - d)^2`` (population normalisation)."""
        return self.m2 / self.count + (self.mean - d) ** 2

    def as_dict(self):
        return {**asdict(self), "variance": self.variance(), "std_error": self.std_error()}


def merge_stats(a: TerminalStats, b: TerminalStats) -> TerminalStats:
    """Pool two sets of moments (Chan, Golub and LeVeque pairwise update)."""
    if a.count == 0:
        return b
    if b.count == 0:
        return a
    n = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / n)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / n)
    return TerminalStats(n, mean, m2, min(a.min, b.min), max(a.max, b.max))


def worker_count(threads: int | None = None) -> int:
    """Worker cap from the argument or ``MV_NONLINEAR_THREADS`` (0 = all CPUs)."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            threads = int(raw)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValidationError(f"thread count must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


def path_normals(seed: int, first: int, last: int, n_steps: int, antithetic: bool = False) -> np.ndarray:
    """Standard normals for paths ``first..last-1``, one row per path.

    With ``antithetic`` paths ``2k`` and ``2k + 1`` share stream ``k`` with
    opposite signs.
    """
    out = np.empty((last - first, n_steps))
    for row, i in enumerate(range(first, last)):
        stream = i // 2 if antithetic else i
        z = np.random.Generator(np.random.Philox(key=[seed, stream])).standard_normal(n_steps)
        out[row] = -z if antithetic and i % 2 else z
    return out


class _Schedule:
    """Per-step coefficients and thresholds, shared by every batch."""

    def __init__(self, params: MarketParams, d: float, n_steps: int):
        self.dt = params.horizon / n_steps
        t = np.linspace(0.0, params.horizon, n_steps + 1)[:-1]
        self.r, self.lo, self.hi, self.sigma = (np.atleast_1d(c) for c in params.coefficients(t))
        self.thr = np.atleast_1d(threshold(params, t, d))
        self.n_steps = n_steps


def _run_batch(sched: _Schedule, x0: float, first: int, last: int, sim: SimConfig) -> TerminalStats:
    z = path_normals(sim.seed, first, last, sim.n_steps, sim.antithetic)
    x = np.full(last - first, float(x0))
    dt, sqdt = sched.dt, math.sqrt(sched.dt)
    for k in range(sched.n_steps):
        lo, hi, sig = sched.lo[k], sched.hi[k], sched.sigma[k]
        pi = policy_from_coefficients(x, sched.thr[k], lo, hi, sig)
        drift = sched.r[k] * x + sig * (lo * np.maximum(pi, 0.0) - hi * np.maximum(-pi, 0.0))
        x = x + drift * dt + pi * sig * sqdt * z[:, k]
        if not np.all(np.isfinite(x)):
            raise NonFinitePath(first + int(np.flatnonzero(~np.isfinite(x))[0]), k + 1)
    return TerminalStats.from_samples(x)


def simulate_paths(params: MarketParams, x0: float, d: float, sim: SimConfig,
                   threads: int | None = None) -> TerminalStats:
    """Terminal-wealth moments under the optimal feedback rule for target ``d``.

    The policy is evaluated at the left end of each step.
    """
    require_valid(params)
    sched = _Schedule(params, d, sim.n_steps)
    batches = sim.batches()
    workers = min(worker_count(threads), len(batches))
    if workers <= 1:
        parts = [_run_batch(sched, x0, a, b, sim) for a, b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: _run_batch(sched, x0, ab[0], ab[1], sim), batches))
    total = TerminalStats()
    for part in parts:
        total = merge_stats(total, part)
    return total


@dataclass(frozen=True)
class FrontierEstimate:
    analytic: FrontierPoint
    empirical: TerminalStats
    mean_std_error: float
    variance_ci: tuple[float, float]
    confidence: float
    sim: SimConfig = field(repr=False)

    @property
    def mean_z(self) -> float:
        """Empirical minus target mean, in standard errors."""
        gap = self.empirical.mean - self.analytic.K
        if self.mean_std_error > 0:
            return gap / self.mean_std_error
        return 0.0 if gap == 0 else math.copysign(math.inf, gap)

    @property
    def variance_rel_error(self) -> float:
        target = self.analytic.variance
        emp = self.empirical.variance()
        if target > 0:
            return abs(emp - target) / target
        return 0.0 if emp == 0 else math.inf

    def as_dict(self):
        return {
            "analytic": self.analytic.as_dict(),
            "empirical": self.empirical.as_dict(),
            "mean_std_error": self.mean_std_error,
            "mean_z": self.mean_z,
            "variance_ci": list(self.variance_ci),
            "confidence": self.confidence,
            "variance_rel_error": self.variance_rel_error,
        }


def variance_confidence_interval(stats: TerminalStats, confidence: float = 0.95):
    """Normal-theory chi-square interval for the variance."""
    dof = stats.count - 1
    if dof < 1:
        return (math.nan, math.nan)
    alpha = 1.0 - confidence
    return (
        stats.m2 / sps.chi2.ppf(1.0 - alpha / 2.0, dof),
        stats.m2 / sps.chi2.ppf(alpha / 2.0, dof),
    )


def estimate_frontier_point(params: MarketParams, spec: ProblemSpec, sim: SimConfig,
                            confidence: float = 0.95, threads: int | None = None) -> FrontierEstimate:
    """Simulate the efficient strategy for ``spec`` and compare with the frontier."""
    analytic = efficient_frontier_variance(params, spec)
    d = lagrange_d_star(params, spec).d
    emp = simulate_paths(params, spec.x0, d, sim, threads=threads)
    return FrontierEstimate(analytic, emp, emp.std_error(), variance_confidence_interval(emp, confidence),
                            confidence, sim)
