"""Quenched ASIP diagnostics for random piecewise expanding interval maps."""

__version__ = "0.1.0"
