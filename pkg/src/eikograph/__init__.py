"""Explicit graph schemes for the Eikonal equation on sampled manifolds."""

__version__ = "0.1.0"
