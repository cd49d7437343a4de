"""Semantic-tag anomaly monitoring for industrial control networks."""

__version__ = "0.1.0"
