"""Eigenvalue expansions for magnetic wells via Birkhoff normal forms."""

__version__ = "0.1.0"
