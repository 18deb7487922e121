"""Looped Boolean-circuit reasoning laboratory."""

__version__ = "0.1.0"
