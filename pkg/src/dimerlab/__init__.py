"""Honeycomb dimer model toolkit: exact counting and sampling, bulk kernels,
T-graphs, limit-shape formulas and height fluctuations."""

__version__ = "0.1.0"
