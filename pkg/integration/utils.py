from __future__ import annotations

import csv
import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path
from typing import List, Optional


class Runner:
    def __init__(self, repo_root: Path):
        self.repo_root = repo_root.resolve()
        self.cmd = [sys.executable, "-m", "loopprobe"]

    def env(self) -> dict[str, str]:
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(self.repo_root), env.get("PYTHONPATH")]))
        env.pop("LOOPPROBE_OUT", None)
        return env

    def run(self, args: List[str], cwd: Path, out: Optional[Path] = None) -> subprocess.CompletedProcess:
        cmd = self.cmd + args
        if out is not None:
            with open(out, "w") as f:
                proc = subprocess.run(
                    cmd,
                    cwd=cwd,
                    env=self.env(),
                    stdout=f,
                    stderr=subprocess.PIPE,
                    text=True,
                    check=False,
                )
                if proc.stderr:
                    # Keep stderr out of captured stdout files
                    print(proc.stderr)
                return proc
        return subprocess.run(cmd, cwd=cwd, env=self.env(), capture_output=True, text=True, check=False)


def write_config(base: Path, name: str, doc: dict) -> Path:
    path = base / name
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_json(path: Path) -> dict:
    return json.loads(path.read_text())


def read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def read_matrix(path: Path) -> list[list[float]]:
    return [[float(v) for v in line.split(",")] for line in path.read_text().splitlines() if line]


def file_hashes(out: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir()) if p.is_file()}
