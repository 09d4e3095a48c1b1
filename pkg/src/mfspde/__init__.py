"""Optimal-control laboratory for mean-field SPDEs driven by Brownian motion
and compensated Poisson jumps."""

__version__ = "0.1.0"
