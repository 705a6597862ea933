"""Spectral-Galerkin laboratory for large deviations of the stochastic damped wave equation."""

__version__ = "0.1.0"
