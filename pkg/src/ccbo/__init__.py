"""Chance-constrained Bayesian optimization with coupled constraint models."""

__version__ = "0.1.0"
