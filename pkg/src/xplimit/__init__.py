"""Complexity/error trade-offs for interpretable explanations of functions."""
__version__ = "0.1.0"
