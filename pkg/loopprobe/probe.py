"""Reasoning probes Q_η and the GCN hypothesis class on the computation nodes Γ."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.distance import pdist, squareform

from .aitchison import Composition, aitchison_distance, ilr_inverse_rows
from .circuit import GateConfiguration, TreeTopology
from .errors import ConfigError
from .graph_metric import op_norm_inf

NORM_TOL = 1e-12

Activation = Callable[[np.ndarray], np.ndarray]

ACTIVATIONS: dict[str, Activation] = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}

# activations whose value scales exactly with a positive input scale
HOMOGENEOUS = {"relu", "identity"}


def register_activation(name: str, fn: Activation, lipschitz: float, *, samples: int = 200_001) -> None:
    """Add a user activation after checking σ(0) = 0 and its declared Lipschitz constant on a dense grid."""
    if name in ACTIVATIONS:
        raise ConfigError(f"activation {name!r} already registered")
    if not 0.0 < lipschitz <= 1.0:
        raise ConfigError(f"activation {name!r}: declared Lipschitz constant {lipschitz} must lie in (0, 1]")
    grid = np.linspace(-50.0, 50.0, samples)
    values = np.asarray(fn(grid), dtype=float)
    if values.shape != grid.shape or not np.all(np.isfinite(values)):
        raise ConfigError(f"activation {name!r} must map arrays elementwise to finite values")
    if abs(float(np.asarray(fn(np.zeros(1)))[0])) > 1e-12:
        raise ConfigError(f"activation {name!r} must vanish at 0")
    slopes = np.abs(np.diff(values) / np.diff(grid))
    if slopes.max() > lipschitz + 1e-9:
        raise ConfigError(
            f"activation {name!r}: sampled slope {slopes.max():.6g} exceeds declared Lipschitz constant {lipschitz}"
        )
    ACTIVATIONS[name] = fn


@dataclass(frozen=True)
class ProbeParams:
    eta: float
    m: int

    def __post_init__(self) -> None:
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"certainty η must lie strictly inside (0, 1), got {self.eta}")
        if self.m < 2:
            raise ConfigError(f"probe needs m >= 2 gates, got {self.m}")

    def output_for_gate(self, gate: int) -> Composition:
        if not 0 <= gate < self.m:
            raise ConfigError(f"gate index {gate} out of range [0, {self.m})")
        parts = np.full(self.m, (1.0 - self.eta) / (self.m - 1))
        parts[gate] = self.eta
        return Composition(parts / parts.sum())


def probe_output(
    params: ProbeParams, topology: TreeTopology, config: GateConfiguration, v: int
) -> Composition:
    """η on the gate assigned to ``v``, (1−η)/(m−1) on every other gate."""
    if config.m != params.m:
        raise ConfigError(f"probe built for m={params.m}, configuration has {config.m} gates")
    return params.output_for_gate(config.gate_at(topology, v))


def probe_outputs(params: ProbeParams, topology: TreeTopology, config: GateConfiguration) -> np.ndarray:
    """Probe outputs for every node of Γ, one composition per row."""
    return np.stack([probe_output(params, topology, config, v).parts for v in topology.gamma])


def probe_records(params: ProbeParams, topology: TreeTopology, config: GateConfiguration) -> dict[str, list[float]]:
    return {str(v): probe_output(params, topology, config, v).to_json() for v in topology.gamma}


def probe_complexity(params: ProbeParams) -> float:
    """Largest Aitchison distance between probe outputs of two gates (brute force)."""
    outputs = [params.output_for_gate(g) for g in range(params.m)]
    return max(float(aitchison_distance(a, b)) for a, b in combinations(outputs, 2))


def probe_complexity_closed_form(params: ProbeParams) -> float:
    return math.sqrt(2.0) * abs(math.log(params.eta * (params.m - 1) / (1.0 - params.eta)))


@dataclass(frozen=True)
class GcnHypothesis:
    """f_GCN with L layers and p-hop convolutions; dims = (1, d₁, …, m−1)."""

    p: int
    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...] = field(repr=False)
    betas: tuple[float, ...]
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ConfigError(f"hop count p must be >= 1, got {self.p}")
        if len(self.dims) < 2 or self.dims[0] != 1:
            raise ConfigError(f"dims must start at 1 and have at least two entries, got {self.dims}")
        if len(self.weights) != self.L or len(self.betas) != self.L:
            raise ConfigError(f"{self.L} layers need {self.L} weights and budgets, got {len(self.weights)}/{len(self.betas)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r} (choices: {', '.join(sorted(ACTIVATIONS))})")
        frozen = []
        for l, (w, beta) in enumerate(zip(self.weights, self.betas), start=1):
            w = np.array(w, dtype=float)
            if w.shape != (self.dims[l], self.dims[l - 1]):
                raise ConfigError(f"W_{l} has shape {w.shape}, expected {(self.dims[l], self.dims[l - 1])}")
            if beta <= 0:
                raise ConfigError(f"norm budget β_{l} must be positive, got {beta}")
            norm = op_norm_inf(w)
            if norm > beta * (1.0 + NORM_TOL):
                raise ConfigError(f"‖W_{l}‖_op = {norm:.6g} exceeds budget β_{l} = {beta:.6g}")
            w.setflags(write=False)
            frozen.append(w)
        object.__setattr__(self, "weights", tuple(frozen))

    @property
    def L(self) -> int:
        return len(self.dims) - 1

    @property
    def m(self) -> int:
        return self.dims[-1] + 1

    def scaled(self, c: float) -> GcnHypothesis:
        return GcnHypothesis(self.p, self.dims, tuple(c * w for w in self.weights), self.betas, self.activation)

    def to_json(self) -> dict:
        return {
            "L": self.L,
            "p": self.p,
            "dims": list(self.dims),
            "beta": list(self.betas),
            "activation": self.activation,
            "weights": [[float(v) for v in w.ravel()] for w in self.weights],
        }

    @classmethod
    def from_json(cls, raw: dict) -> GcnHypothesis:
        try:
            dims = tuple(int(d) for d in raw["dims"])
            weights = tuple(
                np.asarray(flat, dtype=float).reshape(dims[l + 1], dims[l]) for l, flat in enumerate(raw["weights"])
            )
            hyp = cls(int(raw["p"]), dims, weights, tuple(float(b) for b in raw["beta"]), str(raw["activation"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed hypothesis document: {e}") from e
        if int(raw.get("L", hyp.L)) != hyp.L:
            raise ConfigError(f"hypothesis declares L={raw['L']} but has {hyp.L} weight matrices")
        return hyp


def hypothesis_dims(m: int, depth: int, hidden: int = 4) -> tuple[int, ...]:
    if depth < 1:
        raise ConfigError(f"depth L must be >= 1, got {depth}")
    return (1,) + (hidden,) * (depth - 1) + (m - 1,)


def sample_hypothesis(
    dims: Sequence[int],
    betas: Sequence[float],
    activation: str = "relu",
    rng: np.random.Generator | int = 0,
    p: int = 1,
) -> GcnHypothesis:
    """Uniform [−1, 1] entries, each W_l rescaled to ‖W_l‖_op = β_l·u_l with u_l ∈ (0, 1]."""
    rng = np.random.default_rng(rng)
    dims = tuple(int(d) for d in dims)
    weights = []
    for l, beta in enumerate(betas, start=1):
        if beta <= 0:
            raise ConfigError(f"norm budget β_{l} must be positive, got {beta}")
        w = rng.uniform(-1.0, 1.0, size=(dims[l], dims[l - 1]))
        u = 1.0 - rng.random()
        norm = op_norm_inf(w)
        weights.append(w * (beta * u / norm) if norm > 0 else w)
    return GcnHypothesis(p, dims, tuple(weights), tuple(float(b) for b in betas), activation)


def zero_hypothesis(dims: Sequence[int], betas: Sequence[float], activation: str = "relu", p: int = 1) -> GcnHypothesis:
    dims = tuple(int(d) for d in dims)
    weights = tuple(np.zeros((dims[l], dims[l - 1])) for l in range(1, len(dims)))
    return GcnHypothesis(p, dims, weights, tuple(float(b) for b in betas), activation)


def gcn_forward(lap_gamma: np.ndarray, hyp: GcnHypothesis, x: ArrayLike) -> np.ndarray:
    """H₀ = x; H_{l+1} = σ(W_{l+1} H_l Δ^p) for l < L−1; output W_L H_{L−1}, shape (m−1)×s."""
    x = np.asarray(x, dtype=float)
    s = x.size
    if lap_gamma.shape != (s, s):
        raise ConfigError(f"Laplacian is {lap_gamma.shape}, input has {s} nodes")
    sigma = ACTIVATIONS[hyp.activation]
    conv = np.linalg.matrix_power(lap_gamma, hyp.p)
    h = x.reshape(1, s)
    for w in hyp.weights[:-1]:
        h = sigma(w @ h @ conv)
    return hyp.weights[-1] @ h


def hypothesis_apply(hyp: GcnHypothesis, lap_gamma: np.ndarray, x: ArrayLike) -> np.ndarray:
    """ilr⁻¹ of every output column; row v is the composition predicted at node v."""
    return ilr_inverse_rows(gcn_forward(lap_gamma, hyp, x).T)


def lipschitz_measure(hyp: GcnHypothesis, lap_gamma: np.ndarray, x: ArrayLike, d_gamma: np.ndarray) -> float:
    """max over v ≠ w of d_A(h_v, h_w)/d(v, w); the ilr isometry makes d_A a Euclidean distance."""
    cols = gcn_forward(lap_gamma, hyp, x).T
    if cols.shape[0] < 2:
        return 0.0
    ratio = squareform(pdist(cols)) / np.where(d_gamma > 0, d_gamma, np.inf)
    return float(ratio.max())


def lipschitz_bound(nu: int, m: int, p: int, depth: int, betas: Sequence[float]) -> float:
    """2·√(m−1)·((3+ν)/2)^{p(L−1)}·Πβ_l."""
    if len(betas) != depth:
        raise ConfigError(f"{depth} layers need {depth} budgets, got {len(betas)}")
    return 2.0 * math.sqrt(m - 1) * ((3.0 + nu) / 2.0) ** (p * (depth - 1)) * math.prod(betas)
