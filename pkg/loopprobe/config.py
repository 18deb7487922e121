"""JSON config documents for the ``gap`` and ``coupon`` subcommands."""
from __future__ import annotations

import json
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, NotRequired, TypedDict, TypeVar

from .coupon import CouponConfig
from .errors import ConfigError
from .experiment import GapConfig

OUT_ENV = "LOOPPROBE_OUT"


class _GapDoc(TypedDict):
    nu: NotRequired[int]
    height: NotRequired[int]
    preset: NotRequired[str]
    eta: NotRequired[float]
    alpha: NotRequired[float]
    loss: NotRequired[str]
    weights: NotRequired[list[float] | None]
    n_grid: NotRequired[list[int]]
    delta: NotRequired[float]
    ensemble: NotRequired[int]
    depth: NotRequired[int]
    hops: NotRequired[int]
    betas: NotRequired[list[float]]
    hidden: NotRequired[int]
    activation: NotRequired[str]
    seed: NotRequired[int]
    replications: NotRequired[int]


class _CouponDoc(TypedDict):
    k: NotRequired[int]
    weights: list[float]
    horizons: list[int]
    trials: NotRequired[int]
    seed: NotRequired[int]
    omega: NotRequired[float | None]
    extremal_draws: NotRequired[int]


# tuple-valued dataclass fields arrive as JSON arrays
_TUPLE_FIELDS = {"weights", "n_grid", "betas", "horizons"}

C = TypeVar("C", GapConfig, CouponConfig)


def read_document(path: Path) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object, got {type(raw).__name__}")
    return raw


def _build(cls: type[C], doc_type: type, raw: dict[str, Any], source: str) -> C:
    known = set(doc_type.__annotations__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {', '.join(unknown)} (allowed: {', '.join(sorted(known))})")
    kwargs = {k: tuple(v) if k in _TUPLE_FIELDS and v is not None else v for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{source}: {e}") from e


def gap_config_from_dict(raw: dict[str, Any], source: str = "gap config") -> GapConfig:
    return _build(GapConfig, _GapDoc, raw, source)


def coupon_config_from_dict(raw: dict[str, Any], source: str = "coupon config") -> CouponConfig:
    raw = dict(raw)
    if "weights" not in raw or "horizons" not in raw:
        raise ConfigError(f"{source}: 'weights' and 'horizons' are required")
    raw.setdefault("k", len(raw["weights"]))
    return _build(CouponConfig, _CouponDoc, raw, source)


def load_gap_config(path: Path) -> GapConfig:
    return gap_config_from_dict(read_document(path), str(path))


def load_coupon_config(path: Path) -> CouponConfig:
    return coupon_config_from_dict(read_document(path), str(path))


def with_seed(config: C, seed: int | None) -> C:
    """CLI ``--seed`` overrides the document's seed."""
    return config if seed is None else replace(config, seed=seed)


def output_dir(flag: str | None, subcommand: str) -> Path:
    """``--out`` wins, then $LOOPPROBE_OUT/<subcommand>, then results/<subcommand>."""
    if flag:
        return Path(flag)
    base = os.environ.get(OUT_ENV)
    return Path(base) / subcommand if base else Path("results") / subcommand
