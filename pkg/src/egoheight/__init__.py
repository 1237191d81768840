"""Camera-height estimation from egocentric video."""

__version__ = "0.1.0"
