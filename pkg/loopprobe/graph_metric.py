"""The looped computation digraph and its Markov-chain metric geometry.

Builds G_sc from a tree topology, then the transition matrix, Perron vector,
hitting probabilities Q, normalized matrix E, hitting-probability metric d
and the combinatorial Laplacian, together with closed-form predictions for
G_sc used as oracles.

Hitting times use τ_i = inf{n ≥ 1 : X_n = i}. Q[i][i] is stored as 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Literal

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .circuit import TreeTopology, build_tree
from .errors import CheckFailure, ConfigError, ConvergenceError

HittingMethod = Literal["exact", "monte-carlo", "commute"]

PERRON_TOL = 1e-13
PERRON_MAX_ITER = 10**6
PERRON_CROSS_CHECK_LIMIT = 200
SYMMETRY_TOL = 1e-8
EXHAUSTIVE_TRIANGLE_LIMIT = 500
DOUBLING_LIMIT = 64


@dataclass(frozen=True)
class Digraph:
    k: int
    edges: tuple[tuple[int, int], ...]
    labels: tuple[str, ...]
    base: tuple[int, ...] = ()
    gamma: tuple[int, ...] = ()
    tape: tuple[int, ...] = ()
    root: int | None = None

    def __post_init__(self) -> None:
        if len(set(self.edges)) != len(self.edges):
            raise ConfigError("digraph has duplicate edges")
        for i, j in self.edges:
            if i == j:
                raise ConfigError(f"digraph has a self-loop at {self.labels[i]}")
            if not (0 <= i < self.k and 0 <= j < self.k):
                raise ConfigError(f"edge ({i}, {j}) out of range for k={self.k}")

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.k, self.k))
        for i, j in self.edges:
            a[i, j] = 1.0
        return a

    def is_strongly_connected(self) -> bool:
        n_comp, _ = connected_components(csr_matrix(self.adjacency()), directed=True, connection="strong")
        return n_comp == 1

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class MarkovMetrics:
    P: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    E: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    laplacian: np.ndarray = field(repr=False)
    provenance: str = "exact"

    @property
    def k(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class HittingEstimate:
    Q: np.ndarray
    stderr: np.ndarray
    method: str
    trials: int = 0


@dataclass(frozen=True)
class ClosedForm:
    """Closed-form predictions for G_sc, indexed like ``build_loop_graph``."""

    nu: int
    height: int
    phi: np.ndarray = field(repr=False)
    phi_root: float
    q_base: np.ndarray = field(repr=False)
    e_base: np.ndarray = field(repr=False)
    q_tape: np.ndarray = field(repr=False)
    diameter: float
    diameter_pairs: tuple[tuple[int, int], ...]


def vertex_count(nu: int, height: int) -> int:
    return (2 * nu ** (height + 1) - nu**height - 1) // (nu - 1)


def tape_vertex(topology: TreeTopology, i: int) -> int:
    return topology.n_nodes + i


def build_loop_graph(topology: TreeTopology) -> Digraph:
    """G_sc: tree edges toward the root, root → T_0, the tape chain, T_i → v_{i+1}."""
    n, n_nodes = topology.n_base, topology.n_nodes
    labels: list[str] = [f"v{i + 1}" for i in range(n)]
    for level in range(1, topology.height + 1):
        for j, _ in enumerate(topology.level_nodes(level)):
            labels.append("r" if level == topology.height else f"u{level}.{j + 1}")
    labels += [f"T{i}" for i in range(n)]

    edges: list[tuple[int, int]] = []
    for node in range(n_nodes - 1):
        edges.append((node, topology.parent[node]))
    edges.append((topology.root, tape_vertex(topology, 0)))
    for i in range(n - 1):
        edges.append((tape_vertex(topology, i), tape_vertex(topology, i + 1)))
    for i in range(n):
        edges.append((tape_vertex(topology, i), i))

    g = Digraph(
        k=n_nodes + n,
        edges=tuple(edges),
        labels=tuple(labels),
        base=tuple(range(n)),
        gamma=tuple(topology.gamma),
        tape=tuple(range(n_nodes, n_nodes + n)),
        root=topology.root,
    )
    if g.k != vertex_count(topology.nu, topology.height):
        raise CheckFailure(f"vertex count {g.k} disagrees with formula {vertex_count(topology.nu, topology.height)}")
    if not g.is_strongly_connected():
        raise CheckFailure("loop graph is not strongly connected")
    return g


def transition_matrix(g: Digraph) -> np.ndarray:
    a = g.adjacency()
    out_deg = a.sum(axis=1)
    if np.any(out_deg == 0):
        bad = [g.labels[i] for i in np.flatnonzero(out_deg == 0)]
        raise ConfigError(f"vertices with zero out-degree: {', '.join(bad)}")
    return a / out_deg[:, None]


def _perron_direct(P: np.ndarray) -> np.ndarray:
    k = P.shape[0]
    a = P.T - np.eye(k)
    a[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    return np.linalg.solve(a, b)


def perron_vector(
    P: np.ndarray,
    tol: float = PERRON_TOL,
    max_iter: int = PERRON_MAX_ITER,
    cross_check_limit: int = PERRON_CROSS_CHECK_LIMIT,
) -> np.ndarray:
    """Stationary distribution by lazy power iteration, cross-checked by a direct solve.

    The lazy chain (I + P)/2 has the same fixed point and converges for any
    irreducible P, periodic or not. For k <= ``cross_check_limit`` the
    direct null-space solve is returned once the two agree.
    """
    k = P.shape[0]
    x = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        nxt = 0.5 * (x + x @ P)
        nxt /= nxt.sum()
        if np.abs(nxt - x).sum() < tol:
            x = nxt
            break
        x = nxt
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations (reducible chain?)")
    if k <= cross_check_limit:
        direct = _perron_direct(P)
        if np.max(np.abs(direct - x)) > 1e-9:
            raise CheckFailure(f"power iteration and direct solve disagree by {np.max(np.abs(direct - x)):.3e}")
        x = direct
    if np.any(x <= 0):
        raise CheckFailure("Perron vector has non-positive entries")
    return x / x.sum()


def _exact_hitting(P: np.ndarray) -> np.ndarray:
    k = P.shape[0]
    Q = np.zeros((k, k))
    if k == 2:
        Q[0, 1], Q[1, 0] = P[0, 1], P[1, 0]
        return Q
    eye = np.eye(k - 2)
    for i in range(k):
        targets = np.array([j for j in range(k) if j != i])
        # for each target j, the unknowns are every vertex except i and j
        free = np.array([[x for x in range(k) if x not in (i, j)] for j in targets])
        a = eye[None, :, :] - P[free[:, :, None], free[:, None, :]]
        b = P[free, targets[:, None]]
        try:
            u = np.linalg.solve(a, b[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise CheckFailure(f"singular hitting system from vertex {i}: {e}") from e
        Q[i, targets] = P[i, targets] + np.sum(P[i, free] * u, axis=1)
    return Q


def _monte_carlo_hitting(P: np.ndarray, trials: int, seed: int, max_steps: int) -> tuple[np.ndarray, np.ndarray]:
    k = P.shape[0]
    cum = np.cumsum(P, axis=1)
    Q = np.zeros((k, k))
    streams = np.random.SeedSequence(seed).spawn(k)
    for i in range(k):
        rng = np.random.default_rng(streams[i])
        states = np.full(trials, i)
        visited = np.zeros((trials, k), dtype=bool)
        active = np.arange(trials)
        for _ in range(max_steps):
            if active.size == 0:
                break
            u = rng.random(active.size)
            nxt = np.minimum((u[:, None] > cum[states[active]]).sum(axis=1), k - 1)
            states[active] = nxt
            returned = nxt == i
            visited[active[~returned], nxt[~returned]] = True
            active = active[~returned]
        if active.size:
            raise ConvergenceError(f"{active.size} walks from vertex {i} did not return within {max_steps} steps")
        Q[i] = visited.mean(axis=0)
        Q[i, i] = 0.0
    stderr = np.sqrt(Q * (1.0 - Q) / trials)
    return Q, stderr


def commute_time_hitting(P: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Q from mean first-passage times: Q[i][j] = 1 / (φ(i)(m_ij + m_ji))."""
    k = P.shape[0]
    z = np.linalg.inv(np.eye(k) - P + np.outer(np.ones(k), phi))
    # m_ij = (Z_jj - Z_ij) / φ_j
    m = (np.diag(z)[None, :] - z) / phi[None, :]
    commute = m + m.T
    np.fill_diagonal(commute, np.inf)
    Q = 1.0 / (phi[:, None] * commute)
    np.fill_diagonal(Q, 0.0)
    return Q


def hitting_probabilities(
    P: np.ndarray,
    method: HittingMethod = "exact",
    *,
    trials: int = 100_000,
    seed: int = 0,
    max_steps: int = 1_000_000,
    phi: np.ndarray | None = None,
) -> HittingEstimate:
    """Q[i][j] = P[τ_j < τ_i | X_0 = i] for i ≠ j."""
    k = P.shape[0]
    if method == "exact":
        return HittingEstimate(_exact_hitting(P), np.zeros((k, k)), "exact")
    if method == "commute":
        return HittingEstimate(commute_time_hitting(P, perron_vector(P) if phi is None else phi), np.zeros((k, k)), "commute")
    if method == "monte-carlo":
        if trials < 1:
            raise ConfigError(f"trials must be >= 1, got {trials}")
        Q, stderr = _monte_carlo_hitting(P, trials, seed, max_steps)
        return HittingEstimate(Q, stderr, "monte-carlo", trials)
    raise ConfigError(f"unknown hitting method {method!r}")


def normalized_hitting(phi: np.ndarray, Q: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """E[i][j] = φ(i)Q[i][j] off the diagonal, 1 on it; symmetric up to ``tol``."""
    if Q.shape != (phi.size, phi.size):
        raise ConfigError(f"shape mismatch: φ has {phi.size} entries, Q is {Q.shape}")
    e = phi[:, None] * Q
    asym = float(np.max(np.abs(e - e.T)))
    if asym > tol:
        raise CheckFailure(f"φ(i)Q(i,j) is not symmetric: max deviation {asym:.3e} > {tol:.1e}")
    e = 0.5 * (e + e.T)
    np.fill_diagonal(e, 1.0)
    return e


def hitting_metric(E: np.ndarray) -> np.ndarray:
    off = ~np.eye(E.shape[0], dtype=bool)
    if np.any(E[off] <= 0):
        raise CheckFailure("normalized hitting matrix has non-positive off-diagonal entries")
    d = -np.log(E)
    np.fill_diagonal(d, 0.0)
    return d


def triangle_slack(d: np.ndarray, rng: np.random.Generator | None = None, samples: int = 1_000_000) -> float:
    """min over triples of d(i,m) + d(m,j) − d(i,j); exhaustive up to 500 points."""
    k = d.shape[0]
    if k < 3:
        return 0.0
    if k <= EXHAUSTIVE_TRIANGLE_LIMIT:
        worst = math.inf
        for m in range(k):
            worst = min(worst, float(np.min(d[:, m, None] + d[None, m, :] - d)))
        return worst
    rng = rng or np.random.default_rng(0)
    i, m, j = rng.integers(0, k, size=(3, samples))
    return float(np.min(d[i, m] + d[m, j] - d[i, j]))


def check_metric(d: np.ndarray, slack: float = 1e-9) -> None:
    if not np.allclose(d, d.T, rtol=0, atol=slack):
        raise CheckFailure("distance matrix is not symmetric")
    off = ~np.eye(d.shape[0], dtype=bool)
    if np.any(d[off] <= 0):
        raise CheckFailure("distance matrix has non-positive off-diagonal entries")
    worst = triangle_slack(d)
    if worst < -slack:
        raise CheckFailure(f"triangle inequality violated by {-worst:.3e}")


def laplacian(P: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Δ = Φ − (ΦP + PᵀΦ)/2."""
    if P.shape != (phi.size, phi.size):
        raise ConfigError(f"shape mismatch: φ has {phi.size} entries, P is {P.shape}")
    big_phi = np.diag(phi)
    return big_phi - 0.5 * (big_phi @ P + P.T @ big_phi)


def op_norm_inf(M: np.ndarray) -> float:
    """Induced ℓ∞ operator norm: the largest absolute row sum."""
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=1).max())


def induced_laplacian_on_gamma(lap: np.ndarray, gamma) -> np.ndarray:
    """Principal submatrix of Δ on Γ."""
    idx = np.asarray(list(gamma), dtype=int)
    return lap[np.ix_(idx, idx)]


def diameter(d: np.ndarray) -> tuple[float, tuple[int, int]]:
    k = d.shape[0]
    if k < 2:
        return 0.0, (0, 0)
    iu = np.triu_indices(k, 1)
    flat = int(np.argmax(d[iu]))
    i, j = int(iu[0][flat]), int(iu[1][flat])
    return float(d[i, j]), (i, j)


def _min_cover(universe: int, sets: list[int]) -> int:
    # exact minimum set cover over bitmasks, by increasing cover size
    sets = sorted(set(s & universe for s in sets if s & universe), key=lambda s: -bin(s).count("1"))
    sets = [s for s in sets if not any(t != s and (s | t) == t for t in sets)]
    for size in range(1, len(sets) + 1):
        for combo in combinations(sets, size):
            acc = 0
            for s in combo:
                acc |= s
            if acc == universe:
                return size
    raise CheckFailure("ball cannot be covered (candidate sets incomplete)")


def doubling_constant(d: np.ndarray, eps: float = 1e-12) -> int:
    """Smallest M such that every ball B(x, r) is covered by M balls of radius r/2.

    Radii range over the pairwise distances; exhaustive, so capped at 64 points.
    """
    k = d.shape[0]
    if k > DOUBLING_LIMIT:
        raise ConfigError(f"doubling constant is brute force; {k} points exceeds the {DOUBLING_LIMIT}-point cap")
    if k < 2:
        return 1
    masks = lambda row, r: sum(1 << y for y in range(k) if row[y] <= r + eps)  # noqa: E731
    radii = np.unique(d[np.triu_indices(k, 1)])
    worst = 1
    for r in radii:
        half = [masks(d[c], r / 2) for c in range(k)]
        for x in range(k):
            ball = masks(d[x], r)
            worst = max(worst, _min_cover(ball, half))
    return worst


def layer_phi_bounds(topology: TreeTopology, phi: np.ndarray) -> list[tuple[int, float, float, bool]]:
    """Per-layer stationary bounds for computation nodes below the root.

    Returns (node, lower, upper, holds) for layers 1 .. h−1 with
    lower = ν^{l−1}/2^{ν^h−2}·φ(r), upper = min{(1−2^{−ν})ν^{l−1}, 1}·φ(r).
    """
    nu, n = topology.nu, topology.n_base
    phi_r = phi[topology.root]
    rows = []
    # several nodes sit exactly on a bound
    tol = 1e-9 * phi_r
    for node in topology.gamma[:-1]:
        level = topology.level_of(node)
        lower = nu ** (level - 1) / 2.0 ** (n - 2) * phi_r
        upper = min((1.0 - 2.0**-nu) * nu ** (level - 1), 1.0) * phi_r
        rows.append((node, lower, upper, bool(lower - tol <= phi[node] <= upper + tol)))
    return rows


def exit_law(n_base: int) -> np.ndarray:
    """a_j: probability that an excursion from the root leaves the tape at base node j."""
    a = 2.0 ** -np.arange(1, n_base + 1, dtype=float)
    a[-1] = 2.0 ** -(n_base - 1)
    return a


def closed_form_oracle(nu: int, height: int) -> ClosedForm:
    """Closed-form φ, hitting probabilities and diameter of G_sc.

    Every excursion from a base node climbs to the root and restarts, so
    base-to-base hitting probabilities are a race between exit indices:
    Q(v_i, v_j) = a_j / (a_i + a_j).
    """
    topology = build_tree(nu, height)
    n, n_nodes = topology.n_base, topology.n_nodes
    phi_r = 1.0 / (3.0 - 2.0 ** (1 - n) + height)
    a = exit_law(n)

    phi = np.zeros(vertex_count(nu, height))
    phi[:n] = phi_r * a
    for node in topology.gamma:
        phi[node] = sum(phi[c] for c in topology.children[node])
    phi[n_nodes:] = phi_r * 2.0 ** -np.arange(n, dtype=float)

    q_base = a[None, :] / (a[:, None] + a[None, :])
    np.fill_diagonal(q_base, 0.0)
    e_base = phi_r * np.outer(a, a) / (a[:, None] + a[None, :])
    np.fill_diagonal(e_base, 1.0)

    # tape pairs: Q(T_j, T_i) = 1 and Q(T_i, T_j) = 2^{-(j-i)} for i < j
    idx = np.arange(n)
    q_tape = np.where(idx[:, None] > idx[None, :], 1.0, 2.0 ** -(idx[None, :] - idx[:, None]).astype(float))
    np.fill_diagonal(q_tape, 0.0)

    diam = n * math.log(2.0) - math.log(phi_r)
    pairs = ((n - 2, n - 1), (n - 2, n_nodes + n - 1))
    return ClosedForm(nu, height, phi, phi_r, q_base, e_base, q_tape, diam, pairs)


def compute_markov_metrics(
    g: Digraph,
    method: HittingMethod = "exact",
    *,
    trials: int = 100_000,
    seed: int = 0,
) -> MarkovMetrics:
    P = transition_matrix(g)
    phi = perron_vector(P)
    est = hitting_probabilities(P, method, trials=trials, seed=seed, phi=phi)
    # Monte Carlo symmetry only holds up to sampling error
    tol = SYMMETRY_TOL if method != "monte-carlo" else 1.0
    E = normalized_hitting(phi, est.Q, tol=tol)
    d = hitting_metric(E)
    return MarkovMetrics(P, phi, est.Q, E, d, laplacian(P, phi), est.method)
