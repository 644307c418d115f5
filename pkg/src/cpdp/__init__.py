"""Constrained probability-distribution prediction for articulated-arm motion."""

__version__ = "0.1.0"
