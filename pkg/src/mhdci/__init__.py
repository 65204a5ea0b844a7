"""Spectral convex-integration pipeline for the relaxed ideal MHD system on the 3-torus."""

__version__ = "0.1.0"
