"""Transmission-grid energy-system models from open geodata."""

__version__ = "0.1.0"
