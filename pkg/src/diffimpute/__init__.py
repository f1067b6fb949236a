"""Conditional diffusion imputation for multivariate time-series windows."""

__version__ = "0.1.0"
