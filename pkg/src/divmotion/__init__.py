"""Diverse, part-based stochastic human motion prediction."""

__version__ = "0.1.0"
