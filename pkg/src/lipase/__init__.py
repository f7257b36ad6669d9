"""Passive bistatic radar toolkit: scene simulation, detection and tracking."""

__version__ = "0.1.0"
