"""Coupon-collector coverage: Monte Carlo, closed-form bounds and the extremal check.

τ̄ is the first draw index at which i.i.d. draws from ``weights`` have hit
every point; f(p) = 1 − Σ(1 − p_i)^n̄ is the union-bound lower estimate of
ℙ(τ̄ ≤ n̄) and is concave in p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import binomtest

from .errors import CheckFailure, ConfigError

CONFIDENCE = 0.99
EXACT_LIMIT = 16
EXTREMAL_TOL = 1e-12
SIM_BATCH = 10_000


@dataclass(frozen=True)
class CouponConfig:
    k: int
    weights: tuple[float, ...]
    horizons: tuple[int, ...]
    trials: int = 100_000
    seed: int = 0
    omega: float | None = None
    extremal_draws: int = 10_000

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        _check_weights(self.weights, self.k)
        if not self.horizons:
            raise ConfigError("at least one horizon n̄ is required")
        for n in self.horizons:
            if n < self.k:
                raise ConfigError(f"horizon n̄={n} is below k={self.k}; coverage is impossible")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.omega is not None and not 0.0 <= self.omega <= 1.0 / self.k:
            raise ConfigError(f"ω must lie in [0, 1/k] = [0, {1.0 / self.k:.6g}], got {self.omega}")
        if self.extremal_draws < 1:
            raise ConfigError(f"extremal_draws must be >= 1, got {self.extremal_draws}")


@dataclass(frozen=True)
class CouponBounds:
    lower: float
    upper: float
    sharper: float

    def clipped(self) -> CouponBounds:
        return CouponBounds(max(self.lower, 0.0), max(self.upper, 0.0), max(self.sharper, 0.0))


@dataclass(frozen=True)
class CoverageEstimate:
    horizon: int
    estimate: float
    ci_lo: float
    ci_hi: float
    successes: int
    trials: int


@dataclass(frozen=True)
class HorizonReport:
    delta: float
    guaranteed: int
    upper_limited: int


@dataclass(frozen=True)
class ExtremalReport:
    k: int
    omega: float
    horizon: int
    draws: int
    f_star: float
    f_uniform: float
    f_min: float
    f_max: float
    violations: int
    uniform_violations: int
    literal_violations: int

    @property
    def holds(self) -> bool:
        return self.violations == 0 and self.uniform_violations == 0


def _check_weights(weights: Sequence[float], k: int | None = None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ConfigError("weights must be a non-empty vector")
    if k is not None and w.size != k:
        raise ConfigError(f"{w.size} weights for k={k} points")
    if np.any(w <= 0):
        raise ConfigError("weights must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"weights sum to {w.sum():.12g}, not 1")
    return w


def covering_times(weights: ArrayLike, max_draws: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """τ̄ per trial, or ``max_draws + 1`` when coverage needs more than ``max_draws`` draws."""
    w = _check_weights(weights)
    k = w.size
    out = np.empty(trials, dtype=np.int64)
    for start in range(0, trials, SIM_BATCH):
        batch = min(SIM_BATCH, trials - start)
        draws = rng.choice(k, size=(batch, max_draws), p=w)
        first = np.full((batch, k), max_draws + 1, dtype=np.int64)
        for i in range(k):
            hit = draws == i
            first[:, i] = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, max_draws + 1)
        out[start : start + batch] = first.max(axis=1)
    return out


def coupon_simulate(config: CouponConfig) -> list[CoverageEstimate]:
    """Monte Carlo ℙ(τ̄ ≤ n̄) for every configured horizon, with 99% Clopper–Pearson intervals."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    tau = covering_times(config.weights, max(config.horizons), config.trials, rng)
    rows = []
    for n in config.horizons:
        hits = int(np.count_nonzero(tau <= n))
        ci = binomtest(hits, config.trials).proportion_ci(confidence_level=CONFIDENCE, method="exact")
        rows.append(CoverageEstimate(n, hits / config.trials, float(ci.low), float(ci.high), hits, config.trials))
    return rows


def coupon_bounds(weights: ArrayLike, horizon: int) -> CouponBounds:
    w = _check_weights(weights)
    k, omega = w.size, float(w.min())
    miss = (1.0 - omega) ** horizon
    return CouponBounds(
        lower=1.0 - k * miss,
        upper=1.0 - miss,
        sharper=1.0 - ((k - 1) * omega) ** horizon - (k - 1) * miss,
    )


def coverage_exact(weights: ArrayLike, horizon: int) -> float:
    """ℙ(τ̄ ≤ n̄) by inclusion–exclusion over the missed subset."""
    w = _check_weights(weights)
    if w.size > EXACT_LIMIT:
        raise ConfigError(f"inclusion–exclusion is limited to {EXACT_LIMIT} points, got {w.size}")
    mass, sign = np.zeros(1), np.ones(1)
    for wi in w:
        mass = np.concatenate([mass, mass + wi])
        sign = np.concatenate([sign, -sign])
    return float(np.sum(sign * np.clip(1.0 - mass, 0.0, None) ** horizon))


def coverage_horizon(weights: ArrayLike, delta: float) -> HorizonReport:
    """Smallest n̄ whose lower bound reaches δ̄, and the largest n̄ whose upper bound stays ≤ δ̄."""
    w = _check_weights(weights)
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"δ̄ must lie in (0, 1), got {delta}")
    k, omega = w.size, float(w.min())
    if omega >= 1.0:
        return HorizonReport(delta, 1, 0)
    log_miss = math.log1p(-omega)
    guaranteed = max(k, math.ceil(math.log((1.0 - delta) / k) / log_miss))
    while guaranteed > k and coupon_bounds(w, guaranteed - 1).lower >= delta:
        guaranteed -= 1
    while coupon_bounds(w, guaranteed).lower < delta:
        guaranteed += 1
    limited = max(0, math.floor(math.log1p(-delta) / log_miss))
    while limited > 0 and coupon_bounds(w, limited).upper > delta:
        limited -= 1
    while coupon_bounds(w, limited + 1).upper <= delta:
        limited += 1
    return HorizonReport(delta, guaranteed, limited)


def coverage_lower_estimate(p: np.ndarray, horizon: int) -> np.ndarray:
    """f(p) = 1 − Σ(1 − p_i)^n̄, row-wise."""
    return 1.0 - np.sum((1.0 - p) ** horizon, axis=-1)


def coupon_extremal_check(
    k: int,
    omega: float,
    horizon: int,
    draws: int = 10_000,
    rng: np.random.Generator | int = 0,
    *,
    strict: bool = True,
) -> ExtremalReport:
    """Check that p* = (1−(k−1)ω, ω, …, ω) minimizes f over {p : p_i ≥ ω} and uniform maximizes it.

    ``literal_violations`` counts draws with f(p) > f(p*), i.e. draws that
    would contradict reading p* as the maximizer.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if not 0.0 <= omega <= 1.0 / k + 1e-15:
        raise ConfigError(f"ω must lie in [0, 1/k], got {omega}")
    rng = np.random.default_rng(rng)
    p_star = np.full(k, omega)
    p_star[0] = 1.0 - (k - 1) * omega
    uniform = np.full(k, 1.0 / k)
    p = omega + max(1.0 - k * omega, 0.0) * rng.dirichlet(np.ones(k), size=draws)

    f = coverage_lower_estimate(p, horizon)
    f_star = float(coverage_lower_estimate(p_star, horizon))
    f_uniform = float(coverage_lower_estimate(uniform, horizon))
    report = ExtremalReport(
        k=k,
        omega=omega,
        horizon=horizon,
        draws=draws,
        f_star=f_star,
        f_uniform=f_uniform,
        f_min=float(f.min()),
        f_max=float(f.max()),
        violations=int(np.count_nonzero(f < f_star - EXTREMAL_TOL)),
        uniform_violations=int(np.count_nonzero(f > f_uniform + EXTREMAL_TOL)),
        literal_violations=int(np.count_nonzero(f > f_star + EXTREMAL_TOL)),
    )
    if strict and not report.holds:
        raise CheckFailure(
            f"extremal check failed: {report.violations} draws below f(p*), "
            f"{report.uniform_violations} above f(uniform)"
        )
    return report
