"""Unpaired RGB-to-hyperspectral generation with rational B-spline activations and Gabor-augmented spectral attention."""

__version__ = "0.1.0"
