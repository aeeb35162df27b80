"""Primal-dual constrained continual learning with dual-variable-driven
replay buffer partition and sample selection."""

__version__ = "0.1.0"
