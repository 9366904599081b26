"""Geometry of the image of weights of shallow networks and ERM diagnostics."""

__version__ = "0.1.0"
