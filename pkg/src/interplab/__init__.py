"""Numerical laboratory for loss/error curves along parameter interpolation paths."""

__version__ = "0.1.0"
