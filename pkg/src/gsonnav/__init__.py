"""Deterministic 2D social-navigation simulator with a group-aware planning stack."""

__version__ = "0.1.0"
