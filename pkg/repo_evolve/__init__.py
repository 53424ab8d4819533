"""Learns per-repository event chains and simulates their evolution."""

__version__ = "0.1.0"
