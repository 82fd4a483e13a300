"""Occupation times of refracted spectrally negative Levy processes."""

__version__ = "0.3.0"
