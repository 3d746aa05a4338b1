"""Exact and sampled checks of stochastic-stability identities in mean-field spin glasses."""

__version__ = "0.1.0"
