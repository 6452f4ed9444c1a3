"""Simulation of geometric Rabi spectroscopy in driven degenerate two-band systems."""

__version__ = "0.1.0"
