"""Thermal stability of toric codes: lattices, homology, decoding, dynamics and an exact Davies oracle."""

__version__ = "0.1.0"

from .lattice import build_lattice  # noqa: E402,F401
