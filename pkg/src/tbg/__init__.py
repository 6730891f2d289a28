"""Transferable Boltzmann generators: equivariant CNFs trained by flow matching."""

__version__ = "0.1.0"
