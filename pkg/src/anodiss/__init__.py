"""Multiscale pipe velocity fields, passive-scalar dissipation and backward stochastic flows on the torus."""

__version__ = "0.1.0"
