"""Bayesian radiocarbon chronology engine."""

__version__ = "0.1.0"
