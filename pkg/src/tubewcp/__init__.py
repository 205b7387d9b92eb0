"""Fermi-coordinate tube geometry and a numerical weak comparison verifier."""

__version__ = "0.1.0"
