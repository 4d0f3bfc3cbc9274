"""Longitudinal virtual contrast enhancement toolkit."""

__version__ = "0.1.0"
