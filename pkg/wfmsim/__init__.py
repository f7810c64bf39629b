"""Deterministic simulator for predictive semantic video transmission."""
__version__ = "1.0.0"
