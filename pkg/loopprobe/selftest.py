"""Closed-form oracle suite behind ``loopprobe selftest``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .aitchison import aitchison_distance, aitchison_inner, clr, ilr
from .circuit import build_tree
from .coupon import coupon_bounds, coverage_exact
from .errors import ConfigError
from .graph_metric import (
    build_loop_graph,
    check_metric,
    closed_form_oracle,
    commute_time_hitting,
    diameter,
    hitting_metric,
    hitting_probabilities,
    induced_laplacian_on_gamma,
    laplacian,
    normalized_hitting,
    op_norm_inf,
    perron_vector,
    transition_matrix,
)
from .probe import hypothesis_dims, lipschitz_bound, lipschitz_measure, sample_hypothesis
from .transport import (
    DiscreteMeasure,
    FiniteMetricSpace,
    embed_line_heuristic,
    sandwich_check,
    snowflake,
)

LaplacianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _flipped_laplacian(P: np.ndarray, phi: np.ndarray) -> np.ndarray:
    big_phi = np.diag(phi)
    return big_phi - 0.5 * (big_phi @ P - P.T @ big_phi)


FAULTS: dict[str, LaplacianFn] = {"laplacian-sign": _flipped_laplacian}

# the named result each check reproduces, keyed by check name without its height tag
ANCHORS = {
    "perron": "stationary-distribution recursions",
    "hitting-symmetry": "reversibility of normalized hitting",
    "hitting-entries": "renewal closed forms on base and tape",
    "commute-time": "commute-time identity",
    "laplacian": "symmetrized Laplacian",
    "op-norms": "transition and Laplacian norm bounds",
    "metric": "hitting-probability metric",
    "diameter": "diameter closed form",
    "lipschitz": "GCN Lipschitz bound",
    "sandwich": "snowflake line-embedding sandwich",
    "ilr-isometry": "ilr isometry",
    "coupon-bounds": "coupon-collector coverage bounds",
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    anchor: str
    property: str
    passed: bool
    detail: str


@dataclass
class _Fixture:
    height: int
    P: np.ndarray
    phi: np.ndarray
    Q: np.ndarray
    E: np.ndarray
    d: np.ndarray
    lap: np.ndarray
    gamma: tuple[int, ...]
    labels: tuple[str, ...]


def _fixture(height: int, laplacian_fn: LaplacianFn) -> _Fixture:
    g = build_loop_graph(build_tree(2, height))
    P = transition_matrix(g)
    phi = perron_vector(P)
    Q = hitting_probabilities(P).Q
    E = normalized_hitting(phi, Q)
    return _Fixture(height, P, phi, Q, E, hitting_metric(E), laplacian_fn(P, phi), g.gamma, g.labels)


def _perron(fx: _Fixture) -> tuple[bool, str]:
    dev = float(np.max(np.abs(fx.phi - closed_form_oracle(2, fx.height).phi)))
    return dev <= 1e-10, f"max |φ − oracle| = {dev:.2e}"


def _hitting_symmetry(fx: _Fixture) -> tuple[bool, str]:
    e = fx.phi[:, None] * fx.Q
    dev = float(np.max(np.abs(e - e.T)))
    return dev <= 1e-8, f"max |φ(i)Q(i,j) − φ(j)Q(j,i)| = {dev:.2e}"


def _hitting_entries(fx: _Fixture) -> tuple[bool, str]:
    oracle = closed_form_oracle(2, fx.height)
    n = oracle.q_base.shape[0]
    n_nodes = fx.P.shape[0] - n
    off = ~np.eye(n, dtype=bool)
    tape = slice(n_nodes, n_nodes + n)
    dev = max(
        float(np.max(np.abs(fx.Q[:n, :n] - oracle.q_base)[off])),
        float(np.max(np.abs(fx.E[:n, :n] - oracle.e_base))),
        float(np.max(np.abs(fx.Q[tape, tape] - oracle.q_tape)[off])),
    )
    return dev <= 1e-10, f"max deviation on base and tape pairs = {dev:.2e}"


def _commute(fx: _Fixture) -> tuple[bool, str]:
    dev = float(np.max(np.abs(commute_time_hitting(fx.P, fx.phi) - fx.Q)))
    return dev <= 1e-10, f"max |Q_commute − Q_exact| = {dev:.2e}"


def _laplacian(fx: _Fixture) -> tuple[bool, str]:
    asym = float(np.max(np.abs(fx.lap - fx.lap.T)))
    rows = float(np.max(np.abs(fx.lap.sum(axis=1))))
    root = fx.labels.index("r")
    diag = abs(fx.lap[root, root] - fx.phi[root])
    ok = asym <= 1e-14 and rows <= 1e-12 and diag <= 1e-15
    return ok, f"asymmetry {asym:.2e}, max |Δ·1| {rows:.2e}, |Δ[r][r] − φ(r)| {diag:.2e}"


def _op_norms(fx: _Fixture) -> tuple[bool, str]:
    pt, p, lap = op_norm_inf(fx.P.T), op_norm_inf(fx.P), op_norm_inf(fx.lap)
    lap_g = op_norm_inf(induced_laplacian_on_gamma(fx.lap, fx.gamma))
    ok = abs(pt - 2) <= 1e-12 and abs(p - 1) <= 1e-12 and lap <= 2.5 and lap_g <= lap + 1e-15
    return ok, f"‖Pᵀ‖={pt:.6g} ‖P‖={p:.6g} ‖Δ‖={lap:.6g} ‖Δ_Γ‖={lap_g:.6g}"


def _metric(fx: _Fixture) -> tuple[bool, str]:
    for alpha in (1.0, 0.75, 0.5, 0.25):
        check_metric(fx.d**alpha)
    idx = np.asarray(fx.gamma)
    sub = fx.d[np.ix_(idx, idx)]
    min_gamma = float(sub[~np.eye(idx.size, dtype=bool)].min()) if idx.size > 1 else math.inf
    return min_gamma >= math.log(3) - 1e-12, f"metric for α ∈ {{1, ¾, ½, ¼}}; min Γ distance {min_gamma:.6g}"


def _diameter(fx: _Fixture) -> tuple[bool, str]:
    value, pair = diameter(fx.d)
    oracle = closed_form_oracle(2, fx.height)
    ok = abs(value - oracle.diameter) <= 1e-10
    return ok, f"diam = {value:.12g} at ({fx.labels[pair[0]]}, {fx.labels[pair[1]]}), closed form {oracle.diameter:.12g}"


def _ilr_isometry(rng: np.random.Generator) -> tuple[bool, str]:
    p = rng.dirichlet(np.ones(4), size=1000)
    q = rng.dirichlet(np.ones(4), size=1000)
    da = aitchison_distance(p, q)
    rel = float(np.max(np.abs(np.linalg.norm(ilr(p) - ilr(q), axis=1) - da) / da))
    inner = float(np.max(np.abs(aitchison_inner(p, q) - np.sum(clr(p) * clr(q), axis=1))))
    return rel <= 1e-10 and inner <= 1e-10, f"isometry rel err {rel:.2e}, inner-product err {inner:.2e}"


def _lipschitz(fx: _Fixture, rng: np.random.Generator) -> tuple[bool, str]:
    lap_g = induced_laplacian_on_gamma(fx.lap, fx.gamma)
    idx = np.asarray(fx.gamma)
    d_g = fx.d[np.ix_(idx, idx)]
    worst = 0.0
    for depth in (1, 2):
        for p in (1, 2):
            betas = [1.0] * depth
            bound = lipschitz_bound(2, 3, p, depth, betas)
            for _ in range(20):
                hyp = sample_hypothesis(hypothesis_dims(3, depth), betas, "relu", rng, p)
                x = rng.integers(0, 2, size=idx.size)
                worst = max(worst, lipschitz_measure(hyp, lap_g, x, d_g) / bound)
    return worst <= 1.0, f"largest measured/bound ratio {worst:.4g}"


def _sandwich(fx: _Fixture, rng: np.random.Generator) -> tuple[bool, str]:
    space = FiniteMetricSpace(fx.d)
    alpha = 0.5
    emb = embed_line_heuristic(snowflake(space, alpha))
    worst = math.inf
    for _ in range(20):
        mu = DiscreteMeasure(rng.dirichlet(np.ones(space.k)))
        nu = DiscreteMeasure(rng.dirichlet(np.ones(space.k)))
        rep = sandwich_check(space, alpha, mu, nu, emb, strict=False)
        worst = min(worst, rep.lower_slack, rep.upper_slack)
    return worst >= -1e-8, f"distortion {emb.distortion:.4g}, worst slack {worst:.2e}"


def _coupon() -> tuple[bool, str]:
    b = coupon_bounds([1 / 3] * 3, 3)
    exact = coverage_exact([1 / 3] * 3, 3)
    dev = max(abs(b.lower - 1 / 9), abs(b.upper - 19 / 27), abs(b.sharper - 1 / 9), abs(exact - 2 / 9))
    return dev <= 1e-12 and b.lower <= exact <= b.upper, f"lower/upper/sharper/exact deviation {dev:.2e}"


def run_selftest(inject: str | None = None, seed: int = 0) -> list[CheckResult]:
    if inject is not None and inject not in FAULTS:
        raise ConfigError(f"unknown fault {inject!r} (choices: {', '.join(FAULTS)})")
    lap_fn = FAULTS[inject] if inject else laplacian
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def record(name: str, prop: str, fn: Callable[[], tuple[bool, str]]) -> None:
        try:
            ok, detail = fn()
        except Exception as e:  # a raising check is a failing check
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, ANCHORS[name.split()[0]], prop, ok, detail))

    for h in (1, 2):
        fx = _fixture(h, lap_fn)
        tag = f"h={h}"
        record(f"perron {tag}", "stationary vector matches the closed-form recursions", lambda: _perron(fx))
        record(f"hitting-symmetry {tag}", "φ(i)Q(i,j) = φ(j)Q(j,i)", lambda: _hitting_symmetry(fx))
        record(f"hitting-entries {tag}", "base/tape hitting probabilities match renewal closed forms", lambda: _hitting_entries(fx))
        record(f"commute-time {tag}", "Q from mean first-passage times equals the exact solve", lambda: _commute(fx))
        record(f"laplacian {tag}", "Δ symmetric, Δ·1 = 0, Δ[r][r] = φ(r)", lambda: _laplacian(fx))
        record(f"op-norms {tag}", "‖Pᵀ‖ = ν, ‖P‖ = 1, ‖Δ_Γ‖ ≤ ‖Δ‖ ≤ (3+ν)/2", lambda: _op_norms(fx))
        record(f"metric {tag}", "d and d^α are metrics; min Γ distance ≥ log 3", lambda: _metric(fx))
        record(f"diameter {tag}", "diameter equals log(2^{ν^h}/φ(r))", lambda: _diameter(fx))
        record(f"lipschitz {tag}", "measured GCN Lipschitz constant ≤ closed-form bound", lambda: _lipschitz(fx, rng))
        record(f"sandwich {tag}", "R·W_α ≤ W₁(line pushforwards) ≤ S·W_α", lambda: _sandwich(fx, rng))
    record("ilr-isometry", "‖ilr p − ilr q‖₂ = d_A(p, q); double-sum inner product = clr inner product", lambda: _ilr_isometry(rng))
    record("coupon-bounds", "k=3 uniform n̄=3: bounds 1/9, 19/27, 1/9 and exact 2/9", _coupon)
    return results


def format_table(results: list[CheckResult]) -> str:
    name_w = max(len(r.name) for r in results)
    anchor_w = max(len(r.anchor) for r in results)
    prop_w = max(len(r.property) for r in results)
    lines = [f"{'check':<{name_w}}  {'anchor':<{anchor_w}}  {'property':<{prop_w}}  result  detail"]
    lines.append("─" * len(lines[0]))
    for r in results:
        lines.append(f"{r.name:<{name_w}}  {r.anchor:<{anchor_w}}  {r.property:<{prop_w}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)
