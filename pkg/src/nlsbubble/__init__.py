"""Numerical laboratory for multi-bubble blow-up of the L2-critical NLS."""

__version__ = "0.1.0"
