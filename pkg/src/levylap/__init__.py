"""Spectra of heavy-tailed and sparse random Laplacians, matrix side and tree side."""

__version__ = "0.1.0"
