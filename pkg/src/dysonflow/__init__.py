"""Numerical laboratory for Dyson's Brownian motion and its gap process."""

__version__ = "0.1.0"
