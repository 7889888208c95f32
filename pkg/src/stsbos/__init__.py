"""Finite-time basin-of-stability toolkit for sit-to-stand pendulum models."""

__version__ = "0.1.0"
