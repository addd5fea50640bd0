"""Numerical laboratory for high-velocity and small-amplitude inverse scattering."""

__version__ = "0.1.0"
