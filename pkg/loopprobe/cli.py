"""
loopprobe: looped Boolean-circuit reasoning laboratory

Subcommands:
  graph     Build the looped digraph for (ν, h) and write P, φ, Q, E, d, Δ
            plus a summary; --oracle adds the closed-form predictions.
  gap       Run a generalization-gap experiment from a JSON config.
  coupon    Run the coupon-collector coverage suite from a JSON config.
  circuit   Run the looped tape machine; write its trace and probe outputs.
  selftest  Run every closed-form oracle check at ν=2, h ∈ {1, 2}.

Exit codes: 0 success, 1 failed check, 2 usage or config error.

Usage:
    loopprobe graph --nu 2 --height 2 --oracle
    loopprobe gap configs/gap-small.json --jobs 4
    loopprobe coupon configs/coupon-small.json --format json
    loopprobe selftest
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import console
from .circuit import PRESETS, MachineState, build_tree, default_gate_set, load_configuration, random_configuration, random_prompt, run, trace_records
from .config import load_coupon_config, load_gap_config, output_dir, with_seed
from .console import error, log, section
from .coupon import coupon_bounds, coupon_extremal_check, coupon_simulate, coverage_exact, coverage_horizon, EXACT_LIMIT
from .errors import CheckFailure, ConfigError, ConvergenceError
from .experiment import build_context, draw_replication, risk_wasserstein_check, run_gap_experiment
from .graph_metric import (
    DOUBLING_LIMIT,
    build_loop_graph,
    closed_form_oracle,
    compute_markov_metrics,
    diameter,
    doubling_constant,
    induced_laplacian_on_gamma,
    layer_phi_bounds,
    op_norm_inf,
    triangle_slack,
)
from .output import RunWriter
from .probe import ProbeParams, probe_records
from .selftest import FAULTS, format_table, run_selftest
from .transport import (
    DiscreteMeasure,
    FiniteMetricSpace,
    concentration_profile,
    embed_line_heuristic,
    gamma_subspace,
    reference_distortion,
    snowflake,
)


def _writer(args: argparse.Namespace, subcommand: str, config: str | None = None, seed: int | None = None) -> RunWriter:
    return RunWriter(subcommand, output_dir(args.out, subcommand), args.format, config, seed)


# ── graph ─────────────────────────────────────────────────────────────────────

def cmd_graph(args: argparse.Namespace) -> None:
    section(f"graph ν={args.nu} h={args.height}")
    topology = build_tree(args.nu, args.height)
    g = build_loop_graph(topology)
    metrics = compute_markov_metrics(g, args.method, trials=args.trials, seed=args.seed)
    log(f"k={g.k} vertices, {len(g.edges)} edges, hitting solver: {metrics.provenance}")

    w = _writer(args, "graph", seed=args.seed)
    w.matrix("P", metrics.P, g.labels)
    w.table("phi", ["vertex", "label", "phi"], [(i, g.labels[i], v) for i, v in enumerate(metrics.phi)])
    w.matrix("Q", metrics.Q, g.labels)
    w.matrix("E", metrics.E, g.labels)
    w.matrix("d", metrics.d, g.labels)
    w.matrix("laplacian", metrics.laplacian, g.labels)

    diam, (i, j) = diameter(metrics.d)
    gamma = gamma_subspace(metrics.d, g.gamma, g.labels)
    lap_gamma = induced_laplacian_on_gamma(metrics.laplacian, g.gamma)
    bounds = layer_phi_bounds(topology, metrics.phi)
    summary = {
        "nu": args.nu,
        "height": args.height,
        "k": g.k,
        "provenance": metrics.provenance,
        "labels": list(g.labels),
        "diameter": diam,
        "argmax_pair": [g.labels[i], g.labels[j]],
        "diameter_over_base": diam / topology.n_base,
        "gamma_diameter": gamma.diam,
        "min_gamma_distance": gamma.min_distance if gamma.k > 1 else None,
        "triangle_slack": triangle_slack(metrics.d),
        "op_norms": {
            "P": op_norm_inf(metrics.P),
            "P_T": op_norm_inf(metrics.P.T),
            "laplacian": op_norm_inf(metrics.laplacian),
            "laplacian_gamma": op_norm_inf(lap_gamma),
        },
        "layer_phi_bounds_hold": all(ok for *_, ok in bounds),
    }
    if args.doubling:
        summary["doubling_constant"] = doubling_constant(metrics.d)
    if args.embed_alpha is not None:
        emb = embed_line_heuristic(snowflake(FiniteMetricSpace(metrics.d), args.embed_alpha), seed=args.seed)
        doc = emb.to_json() | {"alpha": args.embed_alpha, "labels": list(g.labels)}
        if "doubling_constant" in summary:
            doc["reference_distortion"] = reference_distortion(summary["doubling_constant"], args.embed_alpha)
        w.json("embedding", doc)
        log(f"line embedding at α={args.embed_alpha}: distortion {emb.distortion:.6g}")

    if args.oracle:
        oracle = closed_form_oracle(args.nu, args.height)
        n = topology.n_base
        tape = slice(topology.n_nodes, topology.n_nodes + n)
        off = ~np.eye(n, dtype=bool)
        deviations = {
            "perron": float(np.max(np.abs(metrics.phi - oracle.phi))),
            "q_base": float(np.max(np.abs(metrics.Q[:n, :n] - oracle.q_base)[off])) if n > 1 else 0.0,
            "e_base": float(np.max(np.abs(metrics.E[:n, :n] - oracle.e_base))),
            "q_tape": float(np.max(np.abs(metrics.Q[tape, tape] - oracle.q_tape)[off])) if n > 1 else 0.0,
            "diameter": abs(diam - oracle.diameter),
        }
        w.json(
            "oracle",
            {
                "phi_root": oracle.phi_root,
                "phi": oracle.phi,
                "q_base": oracle.q_base,
                "e_base": oracle.e_base,
                "q_tape": oracle.q_tape,
                "diameter": oracle.diameter,
                "diameter_pairs": [[g.labels[a], g.labels[b]] for a, b in oracle.diameter_pairs],
                "max_deviation": deviations,
            },
        )
        summary["max_perron_deviation"] = deviations["perron"]
        log(f"max Perron deviation from closed form: {deviations['perron']:.3e}")
    w.json("summary", summary)
    w.manifest()


# ── gap ───────────────────────────────────────────────────────────────────────

def cmd_gap(args: argparse.Namespace) -> None:
    config = with_seed(load_gap_config(Path(args.config)), args.seed)
    section(f"gap {args.config}")
    result = run_gap_experiment(config, jobs=args.jobs)

    w = _writer(args, "gap", args.config, config.seed)
    w.table("gap", ["N", "seed", "gap", "rate_factor", "ratio"], [(r.n, r.seed, r.gap, r.rate_factor, r.ratio) for r in result.rows])

    checks, plans = [], []
    ctx = build_context(config) if args.risk_checks > 0 or args.concentration_seeds > 0 else None
    if args.risk_checks > 0:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        for c in range(args.risk_checks):
            x, targets, hyps = draw_replication(ctx, rng)
            counts = rng.multinomial(config.n_grid[c % len(config.n_grid)], ctx.weights)
            rep = risk_wasserstein_check(ctx, hyps[0], x, targets, counts)
            checks.append((c, int(counts.sum()), rep.gap, rep.wasserstein, rep.c_h, rep.c_q, rep.bound, rep.bound_theory))
            plans.extend((c, i, j, mass) for i, j, mass in rep.plan)
        w.table("risk_checks", ["check", "N", "gap", "wasserstein", "c_h", "c_q", "bound", "bound_theory"], checks)
        w.table("plans", ["check", "i", "j", "mass"], plans)
        log(f"{len(checks)} risk/Wasserstein checks passed")

    if args.concentration_seeds > 0:
        profile = concentration_profile(
            ctx.space, DiscreteMeasure(ctx.weights), config.alpha, config.n_grid, args.concentration_seeds,
            seed=config.seed, delta=config.delta,
        )
        w.table(
            "concentration",
            ["N", "median", "q90", "median_scaled", "rate_factor", "line_bound"],
            [(r.n, r.median, r.q90, r.median_scaled, r.rate_factor, r.line_bound) for r in profile],
        )

    summary = result.summary() | {"seed": config.seed, "risk_checks": len(checks)}
    w.json("summary", summary)
    w.manifest()


# ── coupon ────────────────────────────────────────────────────────────────────

def cmd_coupon(args: argparse.Namespace) -> None:
    config = with_seed(load_coupon_config(Path(args.config)), args.seed)
    section(f"coupon k={config.k} trials={config.trials}")
    estimates = coupon_simulate(config)
    exact_ok = config.k <= EXACT_LIMIT

    rows, failures = [], []
    for est in estimates:
        b = coupon_bounds(config.weights, est.horizon)
        width = est.ci_hi - est.ci_lo
        if est.estimate < b.lower - 3 * width or est.estimate > b.upper + 3 * width:
            failures.append(f"n̄={est.horizon}: estimate {est.estimate:.6g} outside [{b.lower:.6g}, {b.upper:.6g}]")
        if b.sharper < b.lower - 1e-15:
            failures.append(f"n̄={est.horizon}: sharper bound {b.sharper:.6g} below {b.lower:.6g}")
        c = b.clipped()
        exact = coverage_exact(config.weights, est.horizon) if exact_ok else math.nan
        rows.append((est.horizon, est.estimate, est.ci_lo, est.ci_hi, c.lower, c.upper, c.sharper, exact))

    w = _writer(args, "coupon", args.config, config.seed)
    w.table("coupon", ["n_bar", "estimate", "ci_lo", "ci_hi", "lower", "upper", "sharper", "exact"], rows)

    omega = config.omega if config.omega is not None else min(config.weights)
    extremal = [
        coupon_extremal_check(config.k, omega, n, config.extremal_draws, np.random.SeedSequence([config.seed, n]), strict=False)
        for n in config.horizons
    ] if config.k >= 2 else []
    for rep in extremal:
        if not rep.holds:
            failures.append(f"extremal check n̄={rep.horizon}: {rep.violations} below f(p*), {rep.uniform_violations} above f(uniform)")
    w.table(
        "extremal",
        ["n_bar", "omega", "draws", "f_star", "f_uniform", "f_min", "f_max", "violations", "uniform_violations", "literal_violations"],
        [
            (r.horizon, r.omega, r.draws, r.f_star, r.f_uniform, r.f_min, r.f_max, r.violations, r.uniform_violations, r.literal_violations)
            for r in extremal
        ],
    )
    horizon = coverage_horizon(config.weights, args.target)
    w.json(
        "summary",
        {
            "k": config.k,
            "trials": config.trials,
            "seed": config.seed,
            "min_weight": min(config.weights),
            "target": horizon.delta,
            "guaranteed_horizon": horizon.guaranteed,
            "upper_limited_horizon": horizon.upper_limited,
            "failures": failures,
        },
    )
    w.manifest()
    if failures:
        raise CheckFailure("; ".join(failures))


# ── circuit ───────────────────────────────────────────────────────────────────

def cmd_circuit(args: argparse.Namespace) -> None:
    topology = build_tree(args.nu, args.height)
    rng = np.random.default_rng(args.seed)
    if args.gates:
        config = load_configuration(Path(args.gates))
        config.validate(topology)
    else:
        config = random_configuration(topology, default_gate_set(args.nu, args.preset), rng)
    if args.prompt:
        if set(args.prompt) - {"0", "1"}:
            raise ConfigError(f"prompt must be a 0/1 string, got {args.prompt!r}")
        state = MachineState(tuple(int(c) for c in args.prompt))
    else:
        state = random_prompt(topology, rng)
    params = ProbeParams(args.eta, config.m)
    section(f"circuit ν={args.nu} h={args.height} steps={args.steps}")
    trace = run(state, topology, config, args.steps)

    w = _writer(args, "circuit", seed=args.seed)
    w.json("configuration", config.to_json())
    w.json("probe", probe_records(params, topology, config))
    w.table("trace", ["t", "window", "overflow"], [(r["t"], r["window"], r["overflow"]) for r in trace_records(trace)])
    w.manifest()


# ── selftest ──────────────────────────────────────────────────────────────────

def cmd_selftest(args: argparse.Namespace) -> None:
    section("selftest")
    results = run_selftest(args.inject_fault, seed=args.seed or 0)
    print(format_table(results), flush=True)
    w = _writer(args, "selftest", seed=args.seed)
    w.table(
        "selftest",
        ["check", "anchor", "property", "passed", "detail"],
        [(r.name, r.anchor, r.property, r.passed, r.detail) for r in results],
    )
    w.manifest()
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailure(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    log(f"all {len(results)} checks passed")


# ── CLI ───────────────────────────────────────────────────────────────────────

def _add_common_args(p: argparse.ArgumentParser, seed_default: int | None = 0) -> None:
    p.add_argument("--seed", type=int, default=seed_default, metavar="N",
                   help="Master seed (default: %(default)s).")
    p.add_argument("--out", default=None, metavar="DIR",
                   help="Output directory (default: $LOOPPROBE_OUT/<subcommand> or results/<subcommand>).")
    p.add_argument("--format", choices=["csv", "json"], default="csv",
                   help="Format for tables and matrices (default: csv).")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, metavar="N",
                   help="Worker processes for independent replications (default: all CPUs).")
    p.add_argument("--quiet", action="store_true", help="Silence progress logging (warnings still print).")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="loopprobe",
        description="looped Boolean-circuit reasoning laboratory",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("graph", help="Markov metric geometry of the looped digraph.")
    _add_common_args(g)
    g.add_argument("--nu", type=int, required=True, metavar="ν", help="Branching factor (>= 2).")
    g.add_argument("--height", type=int, required=True, metavar="h", help="Tree height (>= 1).")
    g.add_argument("--oracle", action="store_true", help="Also write closed-form predictions and deviations.")
    g.add_argument("--method", choices=["exact", "monte-carlo", "commute"], default="exact",
                   help="Hitting-probability solver (default: exact).")
    g.add_argument("--trials", type=int, default=100_000, metavar="N",
                   help="Walks per start vertex for --method monte-carlo (default: 100000).")
    g.add_argument("--doubling", action="store_true",
                   help=f"Compute the doubling constant (brute force, k <= {DOUBLING_LIMIT}).")
    g.add_argument("--embed-alpha", type=float, default=None, metavar="α",
                   help="Write a line embedding of the α-snowflaked metric.")

    gp = sub.add_parser("gap", help="Generalization-gap experiment from a JSON config.")
    _add_common_args(gp, seed_default=None)
    gp.add_argument("config", help="Gap config JSON (see configs/gap-small.json).")
    gp.add_argument("--risk-checks", type=int, default=20, metavar="N",
                    help="Gap vs Wasserstein inequality checks to run (default: 20; 0=off).")
    gp.add_argument("--concentration-seeds", type=int, default=0, metavar="N",
                    help="Empirical measures per N for the W_α(μ, μᴺ) profile (default: 0=off).")

    c = sub.add_parser("coupon", help="Coupon-collector coverage suite from a JSON config.")
    _add_common_args(c, seed_default=None)
    c.add_argument("config", help="Coupon config JSON (see configs/coupon-small.json).")
    c.add_argument("--target", type=float, default=0.95, metavar="δ̄",
                   help="Coverage probability for the horizon report (default: 0.95).")

    ci = sub.add_parser("circuit", help="Run the looped tape machine.")
    _add_common_args(ci)
    ci.add_argument("--nu", type=int, default=2, metavar="ν")
    ci.add_argument("--height", type=int, default=2, metavar="h")
    ci.add_argument("--preset", choices=PRESETS, default="and-or-proj")
    ci.add_argument("--gates", default=None, metavar="FILE", help="Gate configuration JSON instead of a random one.")
    ci.add_argument("--prompt", default=None, metavar="BITS", help="Initial tape window, T_0 first (default: random).")
    ci.add_argument("--steps", type=int, default=8, metavar="N")
    ci.add_argument("--eta", type=float, default=0.8, metavar="η",
                    help="Probe certainty for probe.json (default: 0.8).")

    st = sub.add_parser("selftest", help="Run every closed-form oracle check.")
    _add_common_args(st)
    st.add_argument("--inject-fault", choices=sorted(FAULTS), default=None, help=argparse.SUPPRESS)

    return p


COMMANDS = {
    "graph": cmd_graph,
    "gap": cmd_gap,
    "coupon": cmd_coupon,
    "circuit": cmd_circuit,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    console.set_quiet(args.quiet)
    if args.jobs < 1:
        error(f"--jobs must be >= 1, got {args.jobs}")
        return 2
    try:
        COMMANDS[args.cmd](args)
    except ConfigError as e:
        error(str(e))
        return 2
    except (CheckFailure, ConvergenceError) as e:
        error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
