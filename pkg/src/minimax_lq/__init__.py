"""Wasserstein-penalized minimax linear-quadratic control."""

__version__ = "0.1.0"
