from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from loopprobe.errors import ConfigError
from loopprobe.experiment import (
    GapConfig,
    build_context,
    draw_replication,
    empirical_risk,
    loss,
    loss_matrix,
    population_risk,
    risk_wasserstein_check,
    run_gap_experiment,
    snowflaked_loss,
    theorem_rate_factor,
)
from loopprobe.probe import hypothesis_apply

SMALL = GapConfig(n_grid=(16, 256), ensemble=4, replications=12, seed=3)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"alpha": 1.0},
        {"alpha": 0.0},
        {"delta": 1.0},
        {"loss": "l2"},
        {"activation": "softplus"},
        {"n_grid": ()},
        {"n_grid": (64, 16)},
        {"ensemble": 0},
        {"depth": 2, "betas": (1.0,)},
        {"betas": (-1.0,)},
        {"weights": (0.5, 0.5)},
        {"weights": (0.5, 0.5, 0.0)},
        {"eta": 1.0},
        {"preset": "xor-only"},
        {"preset": "majority-family"},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        GapConfig(**kwargs)


def test_quantile_level():
    assert GapConfig(delta=0.1).quantile == pytest.approx(0.9)


def test_context_h2():
    ctx = build_context(GapConfig())
    assert ctx.s == 3
    assert ctx.params.m == 3
    assert ctx.K == pytest.approx(math.sqrt(2) * math.log(8), rel=1e-12)
    assert ctx.dims == (1, 2)
    np.testing.assert_allclose(ctx.weights, 1 / 3)
    assert ctx.space.k == 3
    assert ctx.c_j == 2.0


def test_small_weight_lint(capsys):
    build_context(GapConfig(weights=(0.02, 0.49, 0.49)))
    assert "WARN:" in capsys.readouterr().err


def test_rate_factor_formula():
    K = math.sqrt(2) * math.log(8)
    got = theorem_rate_factor(2, 2, 3, 1, 1, (1.0,), K, 0.5, 16, 0.1)
    # M = max(√3, 4, K) = 4
    assert got == pytest.approx((2 * 4**2.5) ** 0.5 * (1 + math.sqrt(math.log(20))) / 4)
    assert theorem_rate_factor(2, 2, 3, 1, 1, (1.0,), K, 0.5, 64, 0.1) == pytest.approx(got / 2)
    with pytest.raises(ConfigError):
        theorem_rate_factor(2, 2, 3, 1, 1, (1.0,), K, 0.5, 0, 0.1)


def test_losses():
    y, z = np.array([0.5, 0.25, 0.25]), np.array([0.25, 0.5, 0.25])
    assert loss(y, z) == pytest.approx(math.sqrt(2) * math.log(2))
    assert loss(y, y, "ilr-linf") == pytest.approx(0.0, abs=1e-15)
    assert loss(y, z, "ilr-linf") <= loss(y, z) + 1e-15
    assert snowflaked_loss(y, z, 0.5) == pytest.approx(loss(y, z) ** 0.5)
    with pytest.raises(ConfigError):
        loss(y, z, "kl")


def test_full_sample_risk_equals_population_risk():
    ctx = build_context(GapConfig())
    rng = np.random.default_rng(0)
    x, targets, hyps = draw_replication(ctx, rng)
    h_out = hypothesis_apply(hyps[0], ctx.lap_gamma, x)
    pop = population_risk(h_out, targets, ctx.weights, 0.5)
    emp = empirical_risk(h_out, [0, 1, 2], targets, 0.5)
    assert emp == pytest.approx(pop, rel=1e-12)
    with pytest.raises(ConfigError):
        empirical_risk(h_out, [], targets[:0], 0.5)
    with pytest.raises(ConfigError):
        population_risk(h_out, targets, [0.5, 0.5], 0.5)


def test_loss_matrix_shape():
    ctx = build_context(SMALL)
    x, targets, hyps = draw_replication(ctx, np.random.default_rng(1))
    assert x.shape == (3,) and set(np.unique(x)) <= {0.0, 1.0}
    assert targets.shape == (3, 3)
    assert loss_matrix(ctx, x, targets, hyps).shape == (4, 3)


def test_gap_experiment_rows_and_summary():
    result = run_gap_experiment(SMALL)
    assert len(result.rows) == 2 * 12
    assert {r.n for r in result.rows} == {16, 256}
    assert all(r.gap >= 0 for r in result.rows)
    for r in result.rows:
        assert r.ratio == pytest.approx(r.gap / r.rate_factor)
    summary = result.summary()
    assert summary["quantile"] == pytest.approx(0.9)
    assert summary["sup_is_lower_bound"] is True
    assert [q["N"] for q in summary["quantiles"]] == [16, 256]
    assert summary["envelope_tolerance"] == pytest.approx(0.2)
    assert summary["ratio_envelope_within_tolerance"] or not summary["ratio_envelope_strictly_nonincreasing"]


def test_gap_experiment_is_deterministic():
    a = run_gap_experiment(SMALL)
    b = run_gap_experiment(SMALL)
    assert a.rows == b.rows
    c = run_gap_experiment(replace(SMALL, seed=4))
    assert a.rows != c.rows


def test_gap_experiment_independent_of_jobs():
    assert run_gap_experiment(SMALL, jobs=2).rows == run_gap_experiment(SMALL, jobs=1).rows


@pytest.mark.parametrize("loss_tag", ["aitchison", "ilr-linf"])
@pytest.mark.parametrize("height", [2, 3])
def test_risk_bounded_by_wasserstein(loss_tag, height):
    ctx = build_context(GapConfig(height=height, loss=loss_tag, depth=2, betas=(1.0, 1.0), hops=2))
    rng = np.random.default_rng(height)
    for c in range(50):
        x, targets, hyps = draw_replication(ctx, rng)
        counts = rng.multinomial((8, 64, 512)[c % 3], ctx.weights)
        rep = risk_wasserstein_check(ctx, hyps[0], x, targets, counts)
        assert rep.holds
        assert rep.bound <= rep.bound_theory + 1e-12


def test_risk_check_nonuniform_sampler():
    ctx = build_context(GapConfig(weights=(0.2, 0.3, 0.5)))
    rng = np.random.default_rng(7)
    x, targets, hyps = draw_replication(ctx, rng)
    rep = risk_wasserstein_check(ctx, hyps[1], x, targets, rng.multinomial(32, ctx.weights))
    assert rep.gap <= rep.bound + 1e-12
    plan = np.zeros((3, 3))
    for i, j, mass in rep.plan:
        plan[i, j] = mass
    np.testing.assert_allclose(plan.sum(axis=1), ctx.weights, atol=1e-9)
    assert float(np.sum(plan * ctx.space.d**0.5)) == pytest.approx(rep.wasserstein, abs=1e-9)


@pytest.mark.slow
def test_acceptance_rate_reproduction():
    config = GapConfig(
        nu=2,
        height=3,
        alpha=0.5,
        n_grid=(16, 64, 256, 1024, 4096),
        ensemble=64,
        replications=200,
        seed=0,
    )
    result = run_gap_experiment(config, jobs=1)
    assert -0.65 <= result.slope <= -0.35
    assert result.envelope_within_tol
