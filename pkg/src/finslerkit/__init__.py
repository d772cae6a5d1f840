"""Numerical Finsler geometry: jets, connections, curvature and conformal changes."""

__version__ = "0.1.0"
