"""Universal constants of the planar lattice Green function and thickness scalings."""

import math

import numpy as np

EULER_GAMMA = float(np.euler_gamma)

# Slope of the lattice Green function in log N (expected-visit normalisation).
GREEN_LOG_SLOPE = 2.0 / math.pi

# Additive constant of the diagonal Green asymptotic at conformal radius one.
GREEN_DIAGONAL_OFFSET = (2.0 / math.pi) * (EULER_GAMMA + 0.5 * math.log(8.0))


def thick_threshold(N, a):
    """Local-time level a site must reach to count as a-thick at scale N."""
    return GREEN_LOG_SLOPE * a * math.log(N) ** 2


def atom_weight(N, a):
    """Mass carried by a single thick point: log N / N^(2-a)."""
    return math.log(N) / N ** (2.0 - a)


def chaos_prefactor(a):
    """Multiplicative constant exp(c0 a / g) between lattice and continuum limits."""
    return math.exp(GREEN_DIAGONAL_OFFSET * a / GREEN_LOG_SLOPE)
