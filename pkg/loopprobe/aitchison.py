"""Aitchison geometry on the open simplex.

Arrays follow the closure convention of compositional-data libraries: the
last axis holds the parts, so every transform also works row-wise on a
stack of compositions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import helmert
from scipy.special import softmax

from .errors import ConfigError

SUM_TOL = 1e-12


@dataclass(frozen=True)
class Composition:
    parts: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        parts = np.array(self.parts, dtype=float)
        if parts.ndim != 1 or parts.size < 2:
            raise ConfigError(f"composition needs a flat vector of >= 2 parts, got shape {parts.shape}")
        if np.any(parts <= 0) or not np.all(np.isfinite(parts)):
            raise ConfigError("composition parts must be finite and strictly positive")
        if abs(parts.sum() - 1.0) > SUM_TOL:
            raise ConfigError(f"composition parts sum to {parts.sum():.15g}, not 1")
        parts.setflags(write=False)
        object.__setattr__(self, "parts", parts)

    @property
    def m(self) -> int:
        return self.parts.size

    @classmethod
    def closure(cls, x: ArrayLike) -> Composition:
        x = np.asarray(x, dtype=float)
        return cls(x / x.sum())

    @classmethod
    def uniform(cls, m: int) -> Composition:
        return cls(np.full(m, 1.0 / m))

    def to_json(self) -> list[float]:
        return [float(v) for v in self.parts]

    def __repr__(self) -> str:
        return f"Composition({np.array2string(self.parts, precision=6)})"


def _parts(p: Composition | ArrayLike) -> np.ndarray:
    if isinstance(p, Composition):
        return p.parts
    x = np.asarray(p, dtype=float)
    if x.shape[-1] < 2:
        raise ConfigError(f"compositions need >= 2 parts, got {x.shape[-1]}")
    if np.any(x <= 0):
        raise ConfigError("log-ratio transforms need strictly positive parts")
    return x


def _same_m(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ConfigError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]} parts")


@lru_cache(maxsize=None)
def _helmert(m: int) -> np.ndarray:
    basis = helmert(m)
    basis.setflags(write=False)
    return basis


def helmert_basis(m: int) -> np.ndarray:
    """(m−1)×m orthonormal basis of the zero-sum hyperplane; row i is e^i."""
    if m < 2:
        raise ConfigError(f"Helmert basis needs m >= 2, got {m}")
    return _helmert(m)


def clr(p: Composition | ArrayLike) -> np.ndarray:
    logs = np.log(_parts(p))
    return logs - logs.mean(axis=-1, keepdims=True)


def clr_inverse(z: ArrayLike) -> np.ndarray:
    return softmax(np.asarray(z, dtype=float), axis=-1)


def ilr(p: Composition | ArrayLike) -> np.ndarray:
    x = _parts(p)
    return clr(x) @ helmert_basis(x.shape[-1]).T


def ilr_inverse_rows(y: ArrayLike) -> np.ndarray:
    """ilr⁻¹ on a stack of coordinate vectors; rows of the result are compositions."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return clr_inverse(y @ helmert_basis(y.shape[-1] + 1))


def ilr_inverse(y: ArrayLike) -> Composition:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ConfigError(f"ilr_inverse takes one coordinate vector, got shape {y.shape}; use ilr_inverse_rows")
    out = ilr_inverse_rows(y)
    # softmax rounding can leave the sum a few ulps away from 1
    return Composition(out / out.sum())


def aitchison_distance(p: Composition | ArrayLike, q: Composition | ArrayLike) -> float | np.ndarray:
    a, b = _parts(p), _parts(q)
    _same_m(a, b)
    return np.linalg.norm(clr(a) - clr(b), axis=-1)


def aitchison_inner(p: Composition | ArrayLike, q: Composition | ArrayLike) -> float | np.ndarray:
    """(1/2m)·Σᵢ Σⱼ log(pᵢ/pⱼ)·log(qᵢ/qⱼ)."""
    a, b = np.log(_parts(p)), np.log(_parts(q))
    _same_m(a, b)
    m = a.shape[-1]
    ra = a[..., :, None] - a[..., None, :]
    rb = b[..., :, None] - b[..., None, :]
    return (ra * rb).sum(axis=(-2, -1)) / (2 * m)


def aitchison_norm(p: Composition | ArrayLike) -> float | np.ndarray:
    return np.sqrt(aitchison_inner(p, p))


def double_sum_distance(p: Composition | ArrayLike, q: Composition | ArrayLike) -> float | np.ndarray:
    """d_A from the pairwise log-ratio definition; slower, kept as an oracle."""
    a, b = np.log(_parts(p)), np.log(_parts(q))
    _same_m(a, b)
    m = a.shape[-1]
    diff = (a[..., :, None] - a[..., None, :]) - (b[..., :, None] - b[..., None, :])
    return np.sqrt((diff**2).sum(axis=(-2, -1)) / (2 * m))
