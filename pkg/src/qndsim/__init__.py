"""Simulation and analysis of dispersive QND probing of trapped atoms."""

__version__ = "0.1.0"
