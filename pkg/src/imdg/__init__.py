"""Implicit-mesh discontinuous Galerkin solver for 2D elastodynamics."""

__version__ = "0.1.0"
