"""Finite element solvers for the thermomicropolar fluid equations."""

__version__ = "0.1.0"
