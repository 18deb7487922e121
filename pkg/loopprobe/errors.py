"""Exception hierarchy shared by the library and the CLI.

Library code raises; only ``cli.main`` turns these into exit codes.
"""
from __future__ import annotations


class LoopProbeError(Exception):
    """Base class for every error raised by loopprobe."""


class ConfigError(LoopProbeError, ValueError):
    """Invalid parameters, malformed config documents, bad CLI input (exit 2)."""


class CheckFailure(LoopProbeError):
    """A numerical invariant or oracle comparison was violated (exit 1)."""


class ConvergenceError(LoopProbeError):
    """An iterative solver hit its iteration limit (exit 1)."""
