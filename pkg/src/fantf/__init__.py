"""Fuzzy-attention transformer for multivariate time series."""

__version__ = "0.1.0"
