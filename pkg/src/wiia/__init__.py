"""Numerical laboratory for weak-interaction-induced annihilation of pulses."""

__version__ = "0.1.0"
