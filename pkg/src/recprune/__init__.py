"""Reconstruction-guided pruning laboratory."""

__version__ = "0.1.0"
