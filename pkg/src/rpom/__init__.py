"""Reduced-order modeling of natural convection in porous media."""

__version__ = "0.1.0"
