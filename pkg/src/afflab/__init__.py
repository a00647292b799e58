"""Thermodynamic formalism for finite and countable affine iterated function systems."""

__version__ = "0.1.0"
