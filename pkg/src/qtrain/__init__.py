"""Quantum-Train: a small quantum circuit plus a mapping network generates the weights of a classical net."""

__version__ = "0.1.0"
