"""Optimal transport on finite metric spaces and snowflake line embeddings.

``wasserstein_alpha`` solves the Kantorovich problem with ground cost d^α
as a linear program (HiGHS); the c-transform of the column duals gives an
optimal potential that is 1-Lipschitz for d^α, i.e. α-Hölder-1 for d.
Line embeddings are searched over point orderings: for a fixed ordering the
best gaps are again an LP, so only the ordering is heuristic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy import sparse
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from .errors import CheckFailure, ConfigError
from .graph_metric import check_metric

WEIGHT_TOL = 1e-12
DUALITY_TOL = 1e-6
SANDWICH_SLACK = 1e-8
BRUTEFORCE_LIMIT = 8
EXHAUSTIVE_ORDER_LIMIT = 6
TIE_PERTURBATION = 1e-9


@dataclass(frozen=True)
class FiniteMetricSpace:
    d: np.ndarray = field(repr=False)
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
            raise ConfigError(f"distance matrix must be square and non-empty, got shape {d.shape}")
        if np.any(np.diag(d) != 0):
            raise ConfigError("distance matrix must have a zero diagonal")
        if self.labels is not None and len(self.labels) != d.shape[0]:
            raise ConfigError(f"{len(self.labels)} labels for {d.shape[0]} points")
        try:
            check_metric(d)
        except CheckFailure as e:
            raise ConfigError(f"not a metric: {e}") from e
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def k(self) -> int:
        return self.d.shape[0]

    @property
    def diam(self) -> float:
        return float(self.d.max())

    @property
    def min_distance(self) -> float:
        if self.k < 2:
            return 0.0
        return float(self.d[~np.eye(self.k, dtype=bool)].min())


@dataclass(frozen=True)
class DiscreteMeasure:
    weights: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ConfigError(f"measure weights must be a non-empty vector, got shape {w.shape}")
        if np.any(w < 0):
            raise ConfigError("measure weights must be non-negative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"measure weights sum to {w.sum():.15g}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, k: int) -> DiscreteMeasure:
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def from_counts(cls, counts: ArrayLike) -> DiscreteMeasure:
        c = np.asarray(counts, dtype=float)
        if c.sum() <= 0:
            raise ConfigError("empirical measure needs at least one sample")
        return cls(c / c.sum())

    @classmethod
    def empirical(cls, base: DiscreteMeasure, n: int, rng: np.random.Generator) -> DiscreteMeasure:
        """λᴺ: N i.i.d. draws from ``base``, with replacement."""
        if n < 1:
            raise ConfigError(f"sample size must be >= 1, got {n}")
        return cls.from_counts(rng.multinomial(n, base.weights))


@dataclass(frozen=True)
class TransportResult:
    cost: float
    plan: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)
    duality_gap: float = 0.0

    def plan_triples(self, tol: float = 1e-15) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(self.plan > tol)
        return [(int(i), int(j), float(self.plan[i, j])) for i, j in zip(rows, cols)]


@dataclass(frozen=True)
class LineEmbedding:
    coords: np.ndarray = field(repr=False)
    R: float
    S: float

    @property
    def distortion(self) -> float:
        return self.S / self.R if self.R > 0 else math.inf

    @property
    def diam(self) -> float:
        return float(self.coords.max() - self.coords.min()) if self.coords.size else 0.0

    def to_json(self) -> dict:
        return {
            "coords": [float(c) for c in self.coords],
            "R": self.R,
            "S": self.S,
            "distortion": self.distortion,
        }


@dataclass(frozen=True)
class SandwichReport:
    w_alpha: float
    w_line: float
    R: float
    S: float
    lower_slack: float
    upper_slack: float

    @property
    def holds(self) -> bool:
        return self.lower_slack >= -SANDWICH_SLACK and self.upper_slack >= -SANDWICH_SLACK


@dataclass(frozen=True)
class ProfileRow:
    n: int
    median: float
    q90: float
    median_scaled: float
    rate_factor: float
    line_bound: float


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"α must lie in (0, 1], got {alpha}")


def snowflake(space: FiniteMetricSpace, alpha: float) -> FiniteMetricSpace:
    _check_alpha(alpha)
    if alpha == 1.0:
        return space
    return FiniteMetricSpace(space.d**alpha, space.labels)


def gamma_subspace(d: np.ndarray, gamma: Sequence[int], labels: Sequence[str] | None = None) -> FiniteMetricSpace:
    """The metric restricted to the computation nodes, reindexed 0..s−1."""
    idx = np.asarray(list(gamma), dtype=int)
    sub_labels = tuple(labels[i] for i in idx) if labels is not None else None
    return FiniteMetricSpace(np.asarray(d)[np.ix_(idx, idx)], sub_labels)


def _transport_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    na, nb = cost.shape
    a_eq = sparse.vstack(
        [
            sparse.kron(sparse.eye(na), np.ones((1, nb))),
            sparse.kron(np.ones((1, na)), sparse.eye(nb)),
        ],
        format="csr",
    )
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise CheckFailure(f"transport LP failed: {res.message}")
    return res


def wasserstein_alpha(
    mu: DiscreteMeasure, nu: DiscreteMeasure, space: FiniteMetricSpace, alpha: float = 1.0
) -> TransportResult:
    """Kantorovich cost between ``mu`` and ``nu`` under ground cost d^α."""
    _check_alpha(alpha)
    if not mu.k == nu.k == space.k:
        raise ConfigError(f"measures on {mu.k} and {nu.k} points, space has {space.k}")
    cost = space.d**alpha
    rows = np.flatnonzero(mu.weights > 0)
    cols = np.flatnonzero(nu.weights > 0)
    res = _transport_lp(cost[np.ix_(rows, cols)], mu.weights[rows], nu.weights[cols])

    plan = np.zeros((space.k, space.k))
    plan[np.ix_(rows, cols)] = res.x.reshape(rows.size, cols.size)
    v = np.full(space.k, -np.inf)
    v[cols] = res.eqlin.marginals[rows.size :]
    # c-transform: f(i) = min_j c(i, j) − v(j), 1-Lipschitz for the metric c
    potential = np.min(cost[:, cols] - v[None, cols], axis=1)
    dual = float(potential @ (mu.weights - nu.weights))
    gap = abs(dual - res.fun)
    if gap > DUALITY_TOL * max(1.0, abs(res.fun)):
        raise CheckFailure(f"transport duality gap {gap:.3e} (primal {res.fun:.12g}, dual {dual:.12g})")
    lip = potential[:, None] - potential[None, :] - cost
    if np.max(lip) > DUALITY_TOL:
        raise CheckFailure(f"transport potential is not α-Hölder-1: excess {np.max(lip):.3e}")
    return TransportResult(max(float(res.fun), 0.0), plan, potential, gap)


def wasserstein_1d(
    xs: ArrayLike, x_weights: ArrayLike | None, ys: ArrayLike, y_weights: ArrayLike | None
) -> float:
    """W₁ between weighted point masses on the line, via the CDF coupling."""
    return float(wasserstein_distance(xs, ys, x_weights, y_weights))


def _ratios(coords: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    k = coords.size
    if k < 2:
        return 1.0, 1.0
    iu = np.triu_indices(k, 1)
    r = np.abs(coords[iu[0]] - coords[iu[1]]) / d[iu]
    return float(r.min()), float(r.max())


def measure_embedding(space: FiniteMetricSpace, coords: ArrayLike) -> LineEmbedding:
    c = np.asarray(coords, dtype=float)
    if c.shape != (space.k,):
        raise ConfigError(f"{c.size} coordinates for {space.k} points")
    R, S = _ratios(c, space.d)
    return LineEmbedding(c, R, S)


def _order_lp(d: np.ndarray, order: Sequence[int]) -> tuple[float, np.ndarray]:
    """Best embedding with a fixed left-to-right order: min S s.t. d ≤ |x−y| ≤ S·d."""
    k = len(order)
    iu = np.triu_indices(k, 1)
    n_pairs = iu[0].size
    # pair (a, b) in position order spans gaps a..b−1
    span = np.zeros((n_pairs, k - 1))
    for row, (a, b) in enumerate(zip(*iu)):
        span[row, a:b] = 1.0
    dist = d[np.asarray(order)[iu[0]], np.asarray(order)[iu[1]]]
    a_ub = np.block([[-span, np.zeros((n_pairs, 1))], [span, -dist[:, None]]])
    b_ub = np.concatenate([-dist, np.zeros(n_pairs)])
    c = np.zeros(k)
    c[-1] = 1.0
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    if res.status != 0:
        raise CheckFailure(f"line-embedding LP failed: {res.message}")
    coords = np.zeros(k)
    coords[np.asarray(order)] = np.concatenate([[0.0], np.cumsum(res.x[:-1])])
    return float(res.x[-1]), coords


def _local_search(d: np.ndarray, order: list[int], max_passes: int = 50) -> tuple[float, np.ndarray, list[int]]:
    best, coords = _order_lp(d, order)
    for _ in range(max_passes):
        improved = False
        for i in range(len(order) - 1):
            trial = order.copy()
            trial[i], trial[i + 1] = trial[i + 1], trial[i]
            s, c = _order_lp(d, trial)
            if s < best - 1e-12:
                best, coords, order, improved = s, c, trial, True
        if not improved:
            break
    return best, coords, order


def _classical_mds_1d(d: np.ndarray) -> np.ndarray:
    k = d.shape[0]
    center = np.eye(k) - np.ones((k, k)) / k
    b = -0.5 * center @ (d**2) @ center
    evals, evecs = np.linalg.eigh(b)
    top = evecs[:, -1]
    if top[np.argmax(np.abs(top))] < 0:
        top = -top
    return top * math.sqrt(max(evals[-1], 0.0))


def _make_injective(coords: np.ndarray, min_dist: float, seed: int) -> np.ndarray:
    _, counts = np.unique(coords, return_counts=True)
    if np.all(counts == 1):
        return coords
    rng = np.random.default_rng(seed)
    return coords + TIE_PERTURBATION * min_dist * rng.random(coords.size)


def embed_line_heuristic(space: FiniteMetricSpace, seed: int = 0) -> LineEmbedding:
    """Classical 1-D MDS ordering, refined by adjacent swaps with an exact LP per ordering."""
    if space.k == 1:
        return LineEmbedding(np.zeros(1), 1.0, 1.0)
    d = space.d
    order = [int(i) for i in np.argsort(_classical_mds_1d(d), kind="stable")]
    _, coords, _ = _local_search(d, order)
    coords = _make_injective(coords, space.min_distance, seed)
    if np.ptp(coords) == 0:
        raise CheckFailure("line embedding collapsed to a single point")
    return measure_embedding(space, coords)


def embed_line_bruteforce(
    space: FiniteMetricSpace, seed: int = 0, restarts: int = 200
) -> LineEmbedding:
    """Near-optimal line embedding for at most 8 points.

    Up to 6 points every ordering is tried; above that, ``restarts`` random
    orderings are locally improved. The heuristic's ordering is always a
    candidate, so the result is never worse than ``embed_line_heuristic``.
    """
    k = space.k
    if k > BRUTEFORCE_LIMIT:
        raise ConfigError(f"brute-force embedding is limited to {BRUTEFORCE_LIMIT} points, got {k}")
    heuristic = embed_line_heuristic(space, seed)
    if k <= 2:
        return heuristic
    d = space.d
    best_s, best_coords = heuristic.distortion, heuristic.coords
    if k <= EXHAUSTIVE_ORDER_LIMIT:
        candidates = (list(p) for p in permutations(range(k)) if p[0] < p[-1])
        for order in candidates:
            s, coords = _order_lp(d, order)
            if s < best_s - 1e-12:
                best_s, best_coords = s, coords
    else:
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            s, coords, _ = _local_search(d, [int(i) for i in rng.permutation(k)])
            if s < best_s - 1e-12:
                best_s, best_coords = s, coords
    return measure_embedding(space, best_coords)


def pushforward(measure: DiscreteMeasure, emb: LineEmbedding) -> tuple[np.ndarray, np.ndarray]:
    return emb.coords, measure.weights


def sandwich_check(
    space: FiniteMetricSpace,
    alpha: float,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    emb: LineEmbedding,
    *,
    strict: bool = True,
) -> SandwichReport:
    """R·W_α ≤ W₁(φ#μ, φ#ν) ≤ S·W_α for an embedding φ of the snowflaked space."""
    if emb.R <= 0:
        raise ConfigError("sandwich check needs an injective embedding (R > 0)")
    w_alpha = wasserstein_alpha(mu, nu, space, alpha).cost
    w_line = wasserstein_1d(*pushforward(mu, emb), *pushforward(nu, emb))
    report = SandwichReport(
        w_alpha=w_alpha,
        w_line=w_line,
        R=emb.R,
        S=emb.S,
        lower_slack=w_line / emb.R - w_alpha,
        upper_slack=emb.S * w_alpha - w_line,
    )
    if strict and not report.holds:
        raise CheckFailure(
            f"sandwich violated: W_α={w_alpha:.12g}, W₁(line)={w_line:.12g}, R={emb.R:.6g}, S={emb.S:.6g}"
        )
    return report


def wasserstein_rate_factor(diam: float, alpha: float, n: int, delta: float) -> float:
    """diam^{3α/2}·(1 + √log(2/δ))/√N, the finite-metric concentration rate without its constant."""
    _check_alpha(alpha)
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"δ must lie in (0, 1), got {delta}")
    return diam ** (1.5 * alpha) * (1.0 + math.sqrt(math.log(2.0 / delta))) / math.sqrt(n)


def line_expectation_bound(diam_line: float, n: int) -> float:
    return math.sqrt(2.0) * diam_line / math.sqrt(n)


def reference_distortion(doubling: int, alpha: float) -> float:
    """(1 + 1/20)³·D^{α/2}: the guaranteed snowflake-embedding distortion as θ → 0."""
    _check_alpha(alpha)
    return (1.0 + 1.0 / 20.0) ** 3 * doubling ** (alpha / 2.0)


def concentration_profile(
    space: FiniteMetricSpace,
    lam: DiscreteMeasure,
    alpha: float,
    n_grid: Sequence[int],
    seeds: int = 200,
    *,
    seed: int = 0,
    delta: float = 0.1,
) -> list[ProfileRow]:
    """W_α(λ, λᴺ) across N; ``median_scaled`` is the median times √N."""
    if seeds < 1:
        raise ConfigError(f"seeds must be >= 1, got {seeds}")
    emb = embed_line_heuristic(snowflake(space, alpha), seed)
    streams = np.random.SeedSequence(seed).spawn(seeds)
    rows = []
    for n in n_grid:
        values = np.array(
            [
                wasserstein_alpha(lam, DiscreteMeasure.empirical(lam, n, np.random.default_rng(s)), space, alpha).cost
                for s in streams
            ]
        )
        median = float(np.median(values))
        rows.append(
            ProfileRow(
                n=n,
                median=median,
                q90=float(np.quantile(values, 0.9)),
                median_scaled=median * math.sqrt(n),
                rate_factor=wasserstein_rate_factor(space.diam, alpha, n, delta),
                line_bound=line_expectation_bound(emb.diam, n) / emb.R,
            )
        )
    return rows
