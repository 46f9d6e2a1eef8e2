"""Dynamic ASEP: q-special functions, lattice generators, orthogonal dualities,
exact Markov-chain tools, contour-integral transition probabilities and a CLI."""

from . import contour, ctmc, duality, errors, lattice, qspecial

__all__ = ["contour", "ctmc", "duality", "errors", "lattice", "qspecial"]
__version__ = "0.1.0"
