"""Numerical laboratory for the landscape function of random Schrodinger operators."""

__version__ = "0.1.0"
