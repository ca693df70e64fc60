"""Strength estimation and strength-targeted tree search for board games."""

__version__ = "0.1.0"
