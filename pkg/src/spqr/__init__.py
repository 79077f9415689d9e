"""Spectral independence regularisation for Q-ensembles."""

__version__ = "0.1.0"
