"""Pathological lung-sound detection with tree ensembles."""

__version__ = "0.1.0"
