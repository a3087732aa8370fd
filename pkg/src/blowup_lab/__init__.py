"""Numerical laboratory for corotational harmonic map heat flow blowup (d = 7)."""

__version__ = "0.1.0"
