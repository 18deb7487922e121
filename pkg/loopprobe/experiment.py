"""Generalization-gap experiments for GCN probes on the looped circuit.

Each replication fixes a gate configuration, a prompt and an ensemble of
hypotheses, then compares the exact population risk against empirical
risks over N i.i.d. node samples. The maximum over a finite ensemble is a
lower bound on the supremum over the hypothesis class.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .aitchison import aitchison_distance, ilr
from .circuit import TreeTopology, build_tree, default_gate_set, evaluate_tree, random_configuration, random_prompt
from .console import log, warn
from .errors import CheckFailure, ConfigError
from .graph_metric import MarkovMetrics, build_loop_graph, compute_markov_metrics, induced_laplacian_on_gamma
from .probe import (
    ACTIVATIONS,
    GcnHypothesis,
    ProbeParams,
    hypothesis_apply,
    hypothesis_dims,
    lipschitz_bound,
    lipschitz_measure,
    probe_complexity,
    probe_outputs,
    sample_hypothesis,
)
from .transport import DiscreteMeasure, FiniteMetricSpace, gamma_subspace, wasserstein_alpha

RISK_SLACK = 1e-12
# relative sampling tolerance when comparing upper quantiles of gap/rate across N
ENVELOPE_TOL = 0.2


def _linf_ilr(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.max(np.abs(ilr(y) - ilr(z)), axis=-1)


# tag -> (J, C_J)
LOSSES: dict[str, tuple[Callable[[np.ndarray, np.ndarray], np.ndarray], float]] = {
    "aitchison": (aitchison_distance, 2.0),
    "ilr-linf": (_linf_ilr, 2.0),
}


@dataclass(frozen=True)
class GapConfig:
    nu: int = 2
    height: int = 2
    preset: str = "and-or-proj"
    eta: float = 0.8
    alpha: float = 0.5
    loss: str = "aitchison"
    weights: tuple[float, ...] | None = None
    n_grid: tuple[int, ...] = (16, 64, 256, 1024)
    delta: float = 0.1
    ensemble: int = 64
    depth: int = 1
    hops: int = 1
    betas: tuple[float, ...] = (1.0,)
    hidden: int = 4
    activation: str = "relu"
    seed: int = 0
    replications: int = 50

    def __post_init__(self) -> None:
        if self.nu < 2 or self.height < 1:
            raise ConfigError(f"need ν >= 2 and h >= 1, got ν={self.nu}, h={self.height}")
        default_gate_set(self.nu, self.preset)
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"α must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"δ must lie in (0, 1), got {self.delta}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r} (choices: {', '.join(LOSSES)})")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError(f"N grid must be non-empty with N >= 1, got {self.n_grid}")
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise ConfigError(f"N grid must be strictly increasing, got {self.n_grid}")
        if self.ensemble < 1 or self.replications < 1:
            raise ConfigError("ensemble and replications must be >= 1")
        if self.depth < 1 or self.hops < 1 or self.hidden < 1:
            raise ConfigError("depth, hops and hidden width must be >= 1")
        if len(self.betas) != self.depth or any(b <= 0 for b in self.betas):
            raise ConfigError(f"need {self.depth} positive norm budgets, got {self.betas}")
        s = (self.nu**self.height - 1) // (self.nu - 1)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.size != s:
                raise ConfigError(f"sampler has {w.size} weights, Γ has {s} nodes")
            if np.any(w <= 0):
                raise ConfigError("sampler weights must be strictly positive on all of Γ")
            if abs(w.sum() - 1.0) > 1e-9:
                raise ConfigError(f"sampler weights sum to {w.sum():.12g}, not 1")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"certainty η must lie strictly inside (0, 1), got {self.eta}")

    @property
    def quantile(self) -> float:
        return 1.0 - self.delta


@dataclass(frozen=True)
class GapContext:
    """Everything a replication needs that does not depend on its seed."""

    config: GapConfig
    topology: TreeTopology
    metrics: MarkovMetrics = field(repr=False)
    lap_gamma: np.ndarray = field(repr=False)
    space: FiniteMetricSpace = field(repr=False)
    params: ProbeParams
    K: float
    weights: np.ndarray = field(repr=False)
    dims: tuple[int, ...]

    @property
    def s(self) -> int:
        return self.topology.n_internal

    @property
    def c_j(self) -> float:
        return LOSSES[self.config.loss][1]


@dataclass(frozen=True)
class GapRow:
    n: int
    seed: int
    gap: float
    rate_factor: float
    ratio: float


@dataclass(frozen=True)
class GapQuantile:
    n: int
    median: float
    q_hi: float
    ratio_q_hi: float


@dataclass(frozen=True)
class GapResult:
    config: GapConfig
    K: float
    rows: list[GapRow] = field(repr=False)
    quantiles: list[GapQuantile]
    slope: float
    envelope_strict: bool
    envelope_within_tol: bool

    def summary(self) -> dict:
        return {
            "nu": self.config.nu,
            "height": self.config.height,
            "alpha": self.config.alpha,
            "loss": self.config.loss,
            "ensemble": self.config.ensemble,
            "replications": self.config.replications,
            "quantile": self.config.quantile,
            "K": self.K,
            "slope": self.slope,
            "ratio_envelope_strictly_nonincreasing": self.envelope_strict,
            "ratio_envelope_within_tolerance": self.envelope_within_tol,
            "envelope_tolerance": ENVELOPE_TOL,
            "sup_is_lower_bound": True,
            "quantiles": [
                {"N": q.n, "median": q.median, "q_hi": q.q_hi, "ratio_q_hi": q.ratio_q_hi} for q in self.quantiles
            ],
        }


@dataclass(frozen=True)
class RiskCheckReport:
    gap: float
    wasserstein: float
    c_h: float
    c_q: float
    c_j_star: float
    bound: float
    bound_theory: float
    # optimal coupling of μ and μᴺ as (i, j, mass) over Γ indices
    plan: tuple[tuple[int, int, float], ...] = field(default=(), repr=False)

    @property
    def slack(self) -> float:
        return self.bound - self.gap

    @property
    def holds(self) -> bool:
        return self.slack >= -RISK_SLACK and self.bound_theory - self.gap >= -RISK_SLACK


def loss(y: ArrayLike, z: ArrayLike, tag: str = "aitchison") -> float | np.ndarray:
    try:
        fn, _ = LOSSES[tag]
    except KeyError:
        raise ConfigError(f"unknown loss {tag!r} (choices: {', '.join(LOSSES)})") from None
    return fn(np.asarray(y, dtype=float), np.asarray(z, dtype=float))


def snowflaked_loss(y: ArrayLike, z: ArrayLike, alpha: float, tag: str = "aitchison") -> float | np.ndarray:
    return loss(y, z, tag) ** alpha


def population_risk(
    h_out: np.ndarray, probe_out: np.ndarray, weights: ArrayLike, alpha: float, tag: str = "aitchison"
) -> float:
    """Σ_v w(v)·J_α(h_v, Q_η(v)), exact because the sampler has finite support."""
    w = np.asarray(weights, dtype=float)
    if w.size != h_out.shape[0]:
        raise ConfigError(f"{w.size} weights for {h_out.shape[0]} nodes")
    return float(w @ snowflaked_loss(h_out, probe_out, alpha, tag))


def empirical_risk(
    h_out: np.ndarray, nodes: ArrayLike, targets: np.ndarray, alpha: float, tag: str = "aitchison"
) -> float:
    """Mean of J_α(h_v, y) over sampled (node, target composition) pairs."""
    nodes = np.asarray(nodes, dtype=int)
    if nodes.size == 0:
        raise ConfigError("empirical risk needs a non-empty sample")
    return float(np.mean(snowflaked_loss(h_out[nodes], targets, alpha, tag)))


def theorem_rate_factor(
    nu: int,
    height: int,
    m: int,
    hops: int,
    depth: int,
    betas: Sequence[float],
    K: float,
    alpha: float,
    n: int,
    delta: float,
    c_j: float = 2.0,
) -> float:
    """(C_J·M^{5/2})^α·(1 + √log(2/δ))/√N with M = max{√m·((3+ν)/2)^{p(L−1)}·Πβ, ν^h, K}."""
    if n < 1:
        raise ConfigError(f"N must be >= 1, got {n}")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"δ must lie in (0, 1), got {delta}")
    lip = math.sqrt(m) * ((3.0 + nu) / 2.0) ** (hops * (depth - 1)) * math.prod(betas)
    bracket = max(lip, float(nu**height), K)
    return (c_j * bracket**2.5) ** alpha * (1.0 + math.sqrt(math.log(2.0 / delta))) / math.sqrt(n)


def build_context(config: GapConfig) -> GapContext:
    topology = build_tree(config.nu, config.height)
    g = build_loop_graph(topology)
    metrics = compute_markov_metrics(g)
    lap_gamma = induced_laplacian_on_gamma(metrics.laplacian, g.gamma)
    space = gamma_subspace(metrics.d, g.gamma, g.labels)
    m = len(default_gate_set(config.nu, config.preset))
    params = ProbeParams(config.eta, m)
    s = topology.n_internal
    weights = np.full(s, 1.0 / s) if config.weights is None else np.asarray(config.weights, dtype=float)
    weights = weights / weights.sum()
    if weights.min() < 1.0 / (10 * s):
        warn(f"sampler weight {weights.min():.3g} is below 1/(10·#Γ) = {1.0 / (10 * s):.3g}; gaps may be dominated by rare nodes")
    return GapContext(
        config=config,
        topology=topology,
        metrics=metrics,
        lap_gamma=lap_gamma,
        space=space,
        params=params,
        K=probe_complexity(params),
        weights=weights,
        dims=hypothesis_dims(m, config.depth, config.hidden),
    )


def draw_replication(ctx: GapContext, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, list[GcnHypothesis]]:
    """Gate configuration, circuit input x, probe targets and hypothesis ensemble for one replication."""
    cfg = ctx.config
    gates = default_gate_set(cfg.nu, cfg.preset)
    gate_config = random_configuration(ctx.topology, gates, rng)
    prompt = random_prompt(ctx.topology, rng)
    x, _ = evaluate_tree(ctx.topology, gate_config, prompt.window)
    targets = probe_outputs(ctx.params, ctx.topology, gate_config)
    hyps = [sample_hypothesis(ctx.dims, cfg.betas, cfg.activation, rng, cfg.hops) for _ in range(cfg.ensemble)]
    return x.astype(float), targets, hyps


def loss_matrix(ctx: GapContext, x: np.ndarray, targets: np.ndarray, hyps: Sequence[GcnHypothesis]) -> np.ndarray:
    """J_α(h_e(v), Q_η(v)) for every hypothesis e (rows) and node v (columns)."""
    return np.stack(
        [
            snowflaked_loss(hypothesis_apply(h, ctx.lap_gamma, x), targets, ctx.config.alpha, ctx.config.loss)
            for h in hyps
        ]
    )


def _replicate(ctx: GapContext, seed_seq: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    x, targets, hyps = draw_replication(ctx, rng)
    losses = loss_matrix(ctx, x, targets, hyps)
    population = losses @ ctx.weights
    gaps = np.empty(len(ctx.config.n_grid))
    for col, n in enumerate(ctx.config.n_grid):
        counts = rng.multinomial(n, ctx.weights)
        gaps[col] = np.max(np.abs(population - losses @ (counts / n)))
    return gaps


def _log_slope(ns: Sequence[int], values: np.ndarray) -> float:
    positive = values > 0
    if positive.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(np.asarray(ns, dtype=float)[positive]), np.log(values[positive]), 1)[0])


def run_gap_experiment(config: GapConfig, jobs: int = 1) -> GapResult:
    ctx = build_context(config)
    log(
        f"gap experiment: ν={config.nu} h={config.height} #Γ={ctx.s} m={ctx.params.m} K={ctx.K:.6g} "
        f"ensemble={config.ensemble} replications={config.replications} jobs={jobs}"
    )
    streams = np.random.SeedSequence(config.seed).spawn(config.replications)
    indices = range(config.replications)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            gaps = np.stack(list(pool.map(_replicate, [ctx] * len(streams), streams)))
    else:
        gaps = np.stack([_replicate(ctx, s) for s in streams])

    rates = np.array(
        [
            theorem_rate_factor(
                config.nu, config.height, ctx.params.m, config.hops, config.depth, config.betas,
                ctx.K, config.alpha, n, config.delta, ctx.c_j,
            )
            for n in config.n_grid
        ]
    )
    ratios = gaps / rates[None, :]
    rows = [
        GapRow(n, r, float(gaps[r, col]), float(rates[col]), float(ratios[r, col]))
        for col, n in enumerate(config.n_grid)
        for r in indices
    ]
    q = config.quantile
    quantiles = [
        GapQuantile(
            n,
            float(np.median(gaps[:, col])),
            float(np.quantile(gaps[:, col], q)),
            float(np.quantile(ratios[:, col], q)),
        )
        for col, n in enumerate(config.n_grid)
    ]
    slope = _log_slope(config.n_grid, np.array([qq.q_hi for qq in quantiles]))
    envelope = [qq.ratio_q_hi for qq in quantiles]
    pairs = list(zip(envelope, envelope[1:]))
    strict = all(b <= a for a, b in pairs)
    within_tol = all(b <= a * (1.0 + ENVELOPE_TOL) for a, b in pairs)
    if not within_tol:
        warn(f"gap/rate {q:.0%} quantiles rise by more than {ENVELOPE_TOL:.0%} in N: {[round(e, 6) for e in envelope]}")
    log(f"fitted log-log slope of the {q:.0%} gap quantile: {slope:.4f}")
    return GapResult(config, ctx.K, rows, quantiles, slope, strict, within_tol)


def risk_wasserstein_check(
    ctx: GapContext,
    hyp: GcnHypothesis,
    x: np.ndarray,
    targets: np.ndarray,
    counts: ArrayLike,
    *,
    strict: bool = True,
) -> RiskCheckReport:
    """|ℛ − ℛᴺ| ≤ (C_J·(C_ℋ + C_Q))^α·W_α(μ, μᴺ) with measured Lipschitz constants.

    C_ℋ is the measured Lipschitz constant of the hypothesis on Γ and
    C_Q = K / min d is the probe's. The bound is also evaluated with the
    closed-form C_ℋ.
    """
    cfg = ctx.config
    counts = np.asarray(counts, dtype=float)
    empirical = DiscreteMeasure.from_counts(counts)
    h_out = hypothesis_apply(hyp, ctx.lap_gamma, x)
    losses = snowflaked_loss(h_out, targets, cfg.alpha, cfg.loss)
    gap = abs(float(ctx.weights @ losses) - float(empirical.weights @ losses))

    transport = wasserstein_alpha(DiscreteMeasure(ctx.weights), empirical, ctx.space, cfg.alpha)
    w_alpha = transport.cost
    c_h = lipschitz_measure(hyp, ctx.lap_gamma, x, ctx.space.d)
    c_q = ctx.K / ctx.space.min_distance if ctx.s > 1 else 0.0
    c_star = ctx.c_j * (c_h + c_q)
    c_theory = ctx.c_j * (lipschitz_bound(cfg.nu, ctx.params.m, hyp.p, hyp.L, hyp.betas) + c_q)
    report = RiskCheckReport(
        gap=gap,
        wasserstein=w_alpha,
        c_h=c_h,
        c_q=c_q,
        c_j_star=c_star,
        bound=c_star**cfg.alpha * w_alpha,
        bound_theory=c_theory**cfg.alpha * w_alpha,
        plan=tuple(transport.plan_triples()),
    )
    if strict and not report.holds:
        raise CheckFailure(
            f"risk gap {gap:.6g} exceeds (C_J*)^α·W_α = {report.bound:.6g} (theory {report.bound_theory:.6g})"
        )
    return report

