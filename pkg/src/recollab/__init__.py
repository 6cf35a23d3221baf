"""Teammate-type inference and best-response routing in a two-agent kitchen."""

__version__ = "0.1.0"
