"""stderr logging helpers.

Everything here writes to stderr so that stdout and result files stay
machine-readable.
"""
from __future__ import annotations

import sys
from datetime import datetime

BAR = "═" * 64

_quiet = False


def set_quiet(quiet: bool) -> None:
    global _quiet
    _quiet = quiet


def log(msg: str = "") -> None:
    if _quiet:
        return
    ts = datetime.now().strftime("%H:%M:%S")
    print(f"[{ts}] [loopprobe] {msg}", file=sys.stderr, flush=True)


def warn(msg: str) -> None:
    # never silenced
    ts = datetime.now().strftime("%H:%M:%S")
    print(f"[{ts}] [loopprobe] WARN: {msg}", file=sys.stderr, flush=True)


def section(title: str) -> None:
    if _quiet:
        return
    print(f"\n{BAR}\n  {title}\n{BAR}", file=sys.stderr, flush=True)


def error(msg: str) -> None:
    ts = datetime.now().strftime("%H:%M:%S")
    print(f"[{ts}] [loopprobe] ERROR: {msg}", file=sys.stderr, flush=True)
