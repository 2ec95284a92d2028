"""Confidence intervals that use uncertain prior information."""

__version__ = "0.1.0"
