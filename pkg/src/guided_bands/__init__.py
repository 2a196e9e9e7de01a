"""Spectra of periodic graph Laplacians perturbed by periodic guides."""

__version__ = "0.1.0"
