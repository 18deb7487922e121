from __future__ import annotations

import math

import numpy as np
import pytest

from loopprobe.coupon import (
    CouponConfig,
    coupon_bounds,
    coupon_extremal_check,
    coupon_simulate,
    coverage_exact,
    coverage_horizon,
    coverage_lower_estimate,
    covering_times,
)
from loopprobe.errors import ConfigError

THIRD = (1 / 3, 1 / 3, 1 / 3)


def test_bounds_k3_uniform():
    b = coupon_bounds(THIRD, 3)
    assert b.lower == pytest.approx(1 / 9, abs=1e-12)
    assert b.upper == pytest.approx(19 / 27, abs=1e-12)
    assert b.sharper == pytest.approx(1 / 9, abs=1e-12)


def test_bounds_clip_negative_lower():
    b = coupon_bounds((0.1, 0.2, 0.7), 3)
    assert b.lower < 0
    assert b.clipped().lower == 0.0
    assert b.sharper >= b.lower


@pytest.mark.parametrize(
    "weights,horizon,expected",
    [(THIRD, 3, 2 / 9), ((0.5, 0.5), 2, 0.5), ((0.5, 0.5), 3, 0.75), ((1.0,), 1, 1.0)],
)
def test_exact_coverage(weights, horizon, expected):
    assert coverage_exact(weights, horizon) == pytest.approx(expected, abs=1e-12)


def test_exact_coverage_nonuniform_enumeration():
    w = np.array([0.2, 0.3, 0.5])
    # enumerate all 3^4 sequences
    total = 0.0
    for seq in np.ndindex(3, 3, 3, 3):
        if len(set(seq)) == 3:
            total += float(np.prod(w[list(seq)]))
    assert coverage_exact(w, 4) == pytest.approx(total, abs=1e-12)


def test_exact_coverage_point_limit():
    with pytest.raises(ConfigError):
        coverage_exact(np.full(17, 1 / 17), 40)


def test_exact_within_bounds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = rng.dirichlet(np.ones(5))
        n = int(rng.integers(5, 60))
        b = coupon_bounds(w, n)
        exact = coverage_exact(w, n)
        assert b.lower - 1e-12 <= exact <= b.upper + 1e-12
        assert b.sharper - 1e-12 <= exact


def test_covering_times_at_least_k():
    tau = covering_times(THIRD, 50, 1000, np.random.default_rng(1))
    assert tau.min() >= 3
    assert tau.max() <= 51


def test_simulation_matches_surjection_count():
    config = CouponConfig(3, THIRD, (3, 10), trials=20_000, seed=0)
    est = coupon_simulate(config)
    assert [e.horizon for e in est] == [3, 10]
    e = est[0]
    sigma = math.sqrt(2 / 9 * 7 / 9 / 20_000)
    assert abs(e.estimate - 2 / 9) <= 5 * sigma
    assert e.ci_lo <= e.estimate <= e.ci_hi
    assert est[1].estimate >= est[0].estimate


def test_simulation_two_coupons():
    est = coupon_simulate(CouponConfig(2, (0.5, 0.5), (2,), trials=20_000, seed=3))[0]
    assert abs(est.estimate - 0.5) <= 5 * math.sqrt(0.25 / 20_000)


def test_simulation_is_seeded():
    config = CouponConfig(3, THIRD, (4,), trials=5_000, seed=9)
    assert coupon_simulate(config) == coupon_simulate(config)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"k": 3, "weights": THIRD, "horizons": (3,), "trials": 0},
        {"k": 3, "weights": THIRD, "horizons": (2,)},
        {"k": 3, "weights": THIRD, "horizons": ()},
        {"k": 3, "weights": (0.5, 0.5), "horizons": (3,)},
        {"k": 2, "weights": (0.6, 0.6), "horizons": (3,)},
        {"k": 3, "weights": THIRD, "horizons": (3,), "omega": 0.5},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        CouponConfig(**kwargs)


def test_coverage_horizon_brackets():
    w = (0.1, 0.2, 0.3, 0.4)
    rep = coverage_horizon(w, 0.95)
    assert coupon_bounds(w, rep.guaranteed).lower >= 0.95
    assert rep.guaranteed == 4 or coupon_bounds(w, rep.guaranteed - 1).lower < 0.95
    assert coupon_bounds(w, rep.upper_limited).upper <= 0.95
    assert coupon_bounds(w, rep.upper_limited + 1).upper > 0.95
    assert rep.upper_limited < rep.guaranteed


def test_lower_estimate_rowwise():
    p = np.array([[0.5, 0.5], [0.9, 0.1]])
    np.testing.assert_allclose(coverage_lower_estimate(p, 2), [0.5, 1 - 0.01 - 0.81])


@pytest.mark.parametrize("k,omega,horizon", [(3, 0.2, 5), (4, 0.1, 8), (5, 0.15, 12)])
def test_extremal_point_minimizes(k, omega, horizon):
    rep = coupon_extremal_check(k, omega, horizon, draws=10_000, rng=k)
    assert rep.holds
    assert rep.f_star <= rep.f_min + 1e-12
    assert rep.f_max <= rep.f_uniform + 1e-12
    # the vertex is a minimizer, so reading it as a maximizer is contradicted
    assert rep.literal_violations > 0


def test_extremal_degenerate_simplex():
    rep = coupon_extremal_check(3, 1 / 3, 4, draws=100)
    assert rep.holds
    assert rep.f_star == pytest.approx(rep.f_uniform)


def test_extremal_rejects_bad_omega():
    with pytest.raises(ConfigError):
        coupon_extremal_check(3, 0.5, 4)
    with pytest.raises(ConfigError):
        coupon_extremal_check(1, 0.5, 4)


@pytest.mark.slow
def test_acceptance_coupon_suite():
    rng = np.random.default_rng(12)
    for k in (3, 5, 8):
        w = tuple(rng.dirichlet(np.full(k, 5.0)))
        horizons = (k, 2 * k, 4 * k, 8 * k)
        for est in coupon_simulate(CouponConfig(k, w, horizons, trials=100_000, seed=k)):
            b = coupon_bounds(w, est.horizon)
            tol = 5 * math.sqrt(max(est.estimate * (1 - est.estimate), 1 / est.trials) / est.trials)
            assert b.lower - tol <= est.estimate <= b.upper + tol
            assert est.ci_lo <= coverage_exact(w, est.horizon) + 3e-3
            assert est.ci_hi >= coverage_exact(w, est.horizon) - 3e-3
    e = coupon_simulate(CouponConfig(3, THIRD, (3,), trials=100_000, seed=0))[0]
    assert abs(e.estimate - 2 / 9) <= 5 * math.sqrt(2 / 9 * 7 / 9 / 100_000)
