"""Result files and the run manifest.

Floats in CSV are written with 17 significant digits. Nothing written here
carries a timestamp, so identical inputs give byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from .console import log

Format = Literal["csv", "json"]


def fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _cell(value: Any) -> str:
    s = fmt(value)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def dumps(doc: Any) -> str:
    return json.dumps(_jsonable(doc), indent=2, ensure_ascii=False) + "\n"


@dataclass
class RunWriter:
    """Writes a subcommand's artifacts into ``out`` and records them for the manifest."""

    subcommand: str
    out: Path
    format: Format = "csv"
    config: str | None = None
    seed: int | None = None
    files: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.files.append(name)
        return path

    def json(self, stem: str, doc: Any) -> Path:
        return self._write(f"{stem}.json", dumps(doc))

    def table(self, stem: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        rows = list(rows)
        if self.format == "json":
            return self.json(stem, [dict(zip(columns, r)) for r in rows])
        lines = [",".join(columns)]
        lines += [",".join(_cell(v) for v in r) for r in rows]
        return self._write(f"{stem}.csv", "\n".join(lines) + "\n")

    def matrix(self, stem: str, m: np.ndarray, labels: Sequence[str] | None = None) -> Path:
        m = np.atleast_2d(np.asarray(m, dtype=float))
        if self.format == "json":
            return self.json(stem, {"labels": list(labels) if labels else None, "rows": m})
        text = "\n".join(",".join(fmt(v) for v in row) for row in m) + "\n"
        return self._write(f"{stem}.csv", text)

    def manifest(self) -> Path:
        entries = [
            {"name": name, "sha256": hashlib.sha256((self.out / name).read_bytes()).hexdigest()}
            for name in sorted(self.files)
        ]
        doc = {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "format": self.format,
            "out": str(self.out),
            "files": entries,
        }
        path = self.out / "manifest.json"
        path.write_text(dumps(doc))
        log(f"wrote {len(entries)} files + manifest.json to {self.out}")
        return path
