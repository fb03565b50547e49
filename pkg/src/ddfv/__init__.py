"""Discrete duality finite volume solver and verification lab."""

__version__ = "0.1.0"
