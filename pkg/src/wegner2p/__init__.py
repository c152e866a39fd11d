"""Numerical checks of Wegner-type bounds for a two-particle continuum Anderson model."""

__version__ = "0.1.0"
