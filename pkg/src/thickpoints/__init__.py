"""Thick points of planar random walk and their multiplicative-chaos limits.

Lattice discretisation of planar domains, discrete Green functions and
harmonic measure, exact walk simulation with local times, thick-point
measures and a Monte-Carlo verification harness.
"""

__version__ = "0.1.0"

from .constants import (GREEN_DIAGONAL_OFFSET, GREEN_LOG_SLOPE, atom_weight, chaos_prefactor,
                        thick_threshold)
from .continuum import (UNIT_DISC, Disc, MobiusImage, TripleDXZ, conformal_radius, green_function,
                        poisson_kernel, psi_density, simplex_product_integral)
from .lattice import LatticeDomain, Polygon, discretize, nearest_boundary_site
from .walk import make_rng, sample_conditioned_walk, sample_walk

__all__ = [
    "GREEN_DIAGONAL_OFFSET", "GREEN_LOG_SLOPE", "atom_weight", "chaos_prefactor", "thick_threshold",
    "UNIT_DISC", "Disc", "MobiusImage", "TripleDXZ", "conformal_radius", "green_function",
    "poisson_kernel", "psi_density", "simplex_product_integral", "LatticeDomain", "Polygon",
    "discretize", "nearest_boundary_site", "make_rng", "sample_conditioned_walk", "sample_walk",
]
