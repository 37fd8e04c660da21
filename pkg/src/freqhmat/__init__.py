"""Frequency-extracted hierarchical matrices for the 3D Helmholtz BEM."""

__version__ = "0.1.0"
