"""Numerical lab for the radial energy-critical focusing Hartree equation."""

__version__ = "0.1.0"
