"""Low-depth circuit compilation and classification of encoded images."""

__version__ = "0.1.0"
