"""Mobility mining over passive cellular network data with k-anonymous publication."""

__version__ = "0.1.0"
