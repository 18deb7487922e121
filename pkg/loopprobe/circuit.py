"""Perfect ν-ary computation trees, gate configurations and the looped tape machine.

Node layout: the ν^h base nodes come first (base node ``i`` reads tape cell
``T_i``), then each level of computation nodes from the bottom up, and the
root last. The computation nodes (indices ``n_base .. n_nodes-1``) are Γ.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations, product
from pathlib import Path
from typing import Sequence, TypedDict

import numpy as np

from .errors import ConfigError

PRESETS = ("and-or-proj", "and-or-parity", "majority-family")


@dataclass(frozen=True)
class TreeTopology:
    nu: int
    height: int
    children: tuple[tuple[int, ...], ...] = field(repr=False)
    parent: tuple[int, ...] = field(repr=False)
    level_starts: tuple[int, ...] = field(repr=False)

    @property
    def n_base(self) -> int:
        return self.nu**self.height

    @property
    def n_internal(self) -> int:
        return (self.nu**self.height - 1) // (self.nu - 1)

    @property
    def n_nodes(self) -> int:
        return (self.nu ** (self.height + 1) - 1) // (self.nu - 1)

    @property
    def root(self) -> int:
        return self.n_nodes - 1

    @property
    def gamma(self) -> range:
        """Indices of the computation nodes, in layout order."""
        return range(self.n_base, self.n_nodes)

    def level_of(self, node: int) -> int:
        """Level of ``node``: 0 for base nodes, ``height`` for the root."""
        for level in range(self.height, -1, -1):
            if node >= self.level_starts[level]:
                return level
        raise ValueError(node)

    def level_nodes(self, level: int) -> range:
        start = self.level_starts[level]
        return range(start, start + self.nu ** (self.height - level))

    def leaves_under(self, node: int) -> list[int]:
        stack, leaves = [node], []
        while stack:
            v = stack.pop()
            if v < self.n_base:
                leaves.append(v)
            else:
                stack.extend(self.children[v])
        return sorted(leaves)


@dataclass(frozen=True)
class Gate:
    name: str
    arity: int
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.arity < 1:
            raise ConfigError(f"gate {self.name!r}: arity must be >= 1, got {self.arity}")
        if len(self.table) != 2**self.arity:
            raise ConfigError(
                f"gate {self.name!r}: truth table has {len(self.table)} entries, "
                f"expected 2^{self.arity} = {2**self.arity}"
            )
        if any(b not in (0, 1) for b in self.table):
            raise ConfigError(f"gate {self.name!r}: truth table must contain only 0/1")

    def __call__(self, bits: Sequence[int]) -> int:
        # first input is the most significant bit of the table index
        idx = 0
        for b in bits:
            idx = (idx << 1) | int(b)
        return self.table[idx]

    @classmethod
    def from_function(cls, name: str, arity: int, fn) -> Gate:
        table = tuple(int(bool(fn(bits))) for bits in product((0, 1), repeat=arity))
        return cls(name, arity, table)

    def to_json(self) -> dict:
        return {"name": self.name, "arity": self.arity, "table": "".join(map(str, self.table))}

    @classmethod
    def from_json(cls, raw: dict) -> Gate:
        try:
            return cls(str(raw["name"]), int(raw["arity"]), tuple(int(c) for c in str(raw["table"])))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed gate record {raw!r}: {e}") from e


@dataclass(frozen=True)
class GateConfiguration:
    """Assignment of a gate index to every computation node, in topology order."""

    gates: tuple[Gate, ...]
    assignment: tuple[int, ...]

    @property
    def m(self) -> int:
        return len(self.gates)

    def validate(self, topology: TreeTopology) -> None:
        if len(self.assignment) != topology.n_internal:
            raise ConfigError(
                f"configuration assigns {len(self.assignment)} nodes, "
                f"topology has {topology.n_internal} computation nodes"
            )
        for g in self.gates:
            if g.arity != topology.nu:
                raise ConfigError(f"gate {g.name!r} has arity {g.arity}, tree needs {topology.nu}")
        for a in self.assignment:
            if not 0 <= a < self.m:
                raise ConfigError(f"gate index {a} out of range [0, {self.m})")

    def gate_at(self, topology: TreeTopology, node: int) -> int:
        if node not in topology.gamma:
            raise ConfigError(f"node {node} is not a computation node")
        return self.assignment[node - topology.n_base]

    def to_json(self) -> dict:
        return {"gates": [g.to_json() for g in self.gates], "configuration": list(self.assignment)}

    @classmethod
    def from_json(cls, raw: dict) -> GateConfiguration:
        try:
            gates = tuple(Gate.from_json(g) for g in raw["gates"])
            assignment = tuple(int(a) for a in raw["configuration"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed configuration document: {e}") from e
        return cls(gates, assignment)


@dataclass(frozen=True)
class MachineState:
    window: tuple[int, ...]
    t: int = 0
    overflow: tuple[int, ...] = ()

    def history(self) -> tuple[int, ...]:
        """All bits ever on the tape, oldest first."""
        return self.overflow + tuple(reversed(self.window))


class _StateRecord(TypedDict):
    t: int
    window: str
    overflow: str


def build_tree(nu: int, height: int) -> TreeTopology:
    if nu < 2:
        raise ConfigError(f"branching factor must be >= 2, got {nu}")
    if height < 1:
        raise ConfigError(f"height must be >= 1, got {height}")
    n_nodes = (nu ** (height + 1) - 1) // (nu - 1)
    children: list[tuple[int, ...]] = [()] * n_nodes
    parent = [-1] * n_nodes
    level_starts = [0]
    start, width = 0, nu**height
    for _ in range(height):
        next_start = start + width
        for j in range(width // nu):
            node = next_start + j
            kids = tuple(range(start + j * nu, start + (j + 1) * nu))
            children[node] = kids
            for c in kids:
                parent[c] = node
        level_starts.append(next_start)
        start, width = next_start, width // nu
    return TreeTopology(nu, height, tuple(children), tuple(parent), tuple(level_starts))


def evaluate_tree(
    topology: TreeTopology, config: GateConfiguration, bits: Sequence[int]
) -> tuple[np.ndarray, int]:
    """Bottom-up evaluation; returns (values at Γ in layout order, root bit)."""
    if len(bits) != topology.n_base:
        raise ConfigError(f"input has {len(bits)} bits, tree reads {topology.n_base}")
    config.validate(topology)
    values = np.zeros(topology.n_nodes, dtype=np.int8)
    values[: topology.n_base] = np.asarray(bits, dtype=np.int8)
    for node in topology.gamma:
        gate = config.gates[config.assignment[node - topology.n_base]]
        values[node] = gate(values[list(topology.children[node])])
    internal = values[topology.n_base :].copy()
    return internal, int(values[topology.root])


def step(state: MachineState, topology: TreeTopology, config: GateConfiguration) -> MachineState:
    """read → shift → write: the root output lands in T_0, the last cell falls off."""
    if len(state.window) != topology.n_base:
        raise ConfigError(f"tape window has {len(state.window)} cells, expected {topology.n_base}")
    _, out = evaluate_tree(topology, config, state.window)
    window = (out,) + state.window[:-1]
    return MachineState(window, state.t + 1, state.overflow + (state.window[-1],))


def run(
    state: MachineState, topology: TreeTopology, config: GateConfiguration, steps: int
) -> list[MachineState]:
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    if len(state.window) != topology.n_base:
        raise ConfigError(f"tape window has {len(state.window)} cells, expected {topology.n_base}")
    trace = [state]
    for _ in range(steps):
        trace.append(step(trace[-1], topology, config))
    return trace


def default_gate_set(nu: int, preset: str) -> list[Gate]:
    if nu < 2:
        raise ConfigError(f"branching factor must be >= 2, got {nu}")
    and_gate = Gate.from_function(f"AND{nu}" if nu > 2 else "AND", nu, all)
    or_gate = Gate.from_function(f"OR{nu}" if nu > 2 else "OR", nu, any)
    if preset == "and-or-proj":
        third = Gate.from_function("PROJ1", nu, lambda bits: bits[0])
    elif preset == "and-or-parity":
        third = Gate.from_function(f"XOR{nu}" if nu > 2 else "XOR", nu, lambda bits: sum(bits) % 2)
    elif preset == "majority-family":
        third = Gate.from_function(f"MAJ{nu}", nu, lambda bits: 2 * sum(bits) > nu)
    else:
        raise ConfigError(f"unknown gate preset {preset!r} (choices: {', '.join(PRESETS)})")
    gates = [and_gate, or_gate, third]
    for a, b in combinations(gates, 2):
        if a.table == b.table:
            # strict majority of two inputs is AND
            raise ConfigError(f"preset {preset!r} at ν={nu}: {b.name} has the same truth table as {a.name}")
    return gates


def random_configuration(
    topology: TreeTopology, gates: Sequence[Gate], rng: np.random.Generator
) -> GateConfiguration:
    assignment = rng.integers(0, len(gates), size=topology.n_internal)
    config = GateConfiguration(tuple(gates), tuple(int(a) for a in assignment))
    config.validate(topology)
    return config


def random_prompt(topology: TreeTopology, rng: np.random.Generator) -> MachineState:
    return MachineState(tuple(int(b) for b in rng.integers(0, 2, size=topology.n_base)))


def trace_records(trace: Sequence[MachineState]) -> list[_StateRecord]:
    return [
        {
            "t": s.t,
            "window": "".join(map(str, s.window)),
            "overflow": "".join(map(str, s.overflow)),
        }
        for s in trace
    ]


def load_configuration(path: Path) -> GateConfiguration:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such configuration file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return GateConfiguration.from_json(raw)
