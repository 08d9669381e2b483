"""Broken-rail detection on double-track sections with per-class PCA models."""

__version__ = "0.1.0"
