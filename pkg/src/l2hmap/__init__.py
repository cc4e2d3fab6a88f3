"""Weakly supervised low-to-high land-cover mapping pipeline."""

__version__ = "0.1.0"
