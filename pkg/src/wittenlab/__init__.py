"""Metastable spectral analysis of Dirichlet Witten Laplacians on boxes."""

__version__ = "0.1.0"
