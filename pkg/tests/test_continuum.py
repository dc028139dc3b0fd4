import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from thickpoints.continuum import (UNIT_DISC, Disc, DomainError, MobiusImage, SingularityError,
                                   TripleDXZ, conformal_radius, green_function,
                                   martingale_density, martingale_tail_bound,
                                   multipoint_first_moment_density, poisson_kernel, psi_density,
                                   simplex_product_integral)

# A bounded Möbius image of the unit disc (pole at -2, outside).
MOB = MobiusImage(UNIT_DISC, 1.0, 0.3j, 0.5, 1.0)


def _mob(w):
    return (MOB.alpha * w + MOB.beta) / (MOB.gamma * w + MOB.delta)


def _mob_prime(w):
    det = MOB.alpha * MOB.delta - MOB.beta * MOB.gamma
    return det / (MOB.gamma * w + MOB.delta) ** 2


def test_unit_disc_closed_forms():
    assert conformal_radius(UNIT_DISC, 0.5) == pytest.approx(0.75)
    assert green_function(UNIT_DISC, 0.0, 0.5) == pytest.approx(math.log(2))
    assert 2 * math.pi * poisson_kernel(UNIT_DISC, 0.5, 1.0) == pytest.approx(3.0)


def test_shifted_disc_against_scaling():
    d = Disc(0.3 + 0.1j, 2.0)
    x, y = 0.9 - 0.2j, -0.4 + 0.7j
    u, v = (x - d.center) / 2.0, (y - d.center) / 2.0
    assert conformal_radius(d, x) == pytest.approx(2.0 * (1 - abs(u) ** 2))
    assert green_function(d, x, y) == pytest.approx(math.log(abs(1 - u * np.conj(v)) / abs(u - v)))


def test_green_symmetric_and_positive():
    pts = [0.1 + 0.2j, -0.3j, 0.4 - 0.1j]
    for d in (UNIT_DISC, MOB):
        for x in pts:
            for y in pts:
                xx, yy = _mob(x) if d is MOB else x, _mob(y) if d is MOB else y
                if x != y:
                    g = green_function(d, xx, yy)
                    assert g > 0
                    assert g == pytest.approx(green_function(d, yy, xx), rel=1e-12)


def test_mobius_conformal_invariance():
    x, y = 0.2 + 0.1j, -0.5 + 0.3j
    assert green_function(MOB, _mob(x), _mob(y)) == pytest.approx(green_function(UNIT_DISC, x, y))
    assert conformal_radius(MOB, _mob(x)) == pytest.approx(abs(_mob_prime(x)) * (1 - abs(x) ** 2))


def test_green_log_singularity():
    x = 0.1 + 0.1j
    for eps in (1e-3, 1e-5):
        y = x + eps
        assert green_function(UNIT_DISC, x, y) + math.log(eps) == pytest.approx(
            math.log(conformal_radius(UNIT_DISC, x)), abs=5 * eps)


@pytest.mark.parametrize("d", [UNIT_DISC, Disc(1 + 1j, 0.5), MOB])
def test_poisson_kernel_integrates_to_one(d):
    x = d.finv(0.3 - 0.2j)

    def integrand(t):
        h = 1e-6
        dz = abs(d.boundary_point(t + h) - d.boundary_point(t - h)) / (2 * h)
        return poisson_kernel(d, x, d.boundary_point(t)) * dz

    val, _ = integrate.quad(integrand, 0, 2 * math.pi, limit=200)
    assert val == pytest.approx(1.0, abs=1e-7)


def test_argument_errors():
    with pytest.raises(SingularityError):
        green_function(UNIT_DISC, 0.2, 0.2)
    with pytest.raises(DomainError):
        green_function(UNIT_DISC, 1.5, 0.2)
    with pytest.raises(DomainError):
        poisson_kernel(UNIT_DISC, 0.0, 0.5)
    with pytest.raises(DomainError):
        TripleDXZ(UNIT_DISC, 0.0, 0.9)
    with pytest.raises(ValueError):
        MobiusImage(UNIT_DISC, 1.0, 0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        Disc(0j, -1.0)


def test_psi_density_factors():
    t = TripleDXZ(UNIT_DISC, 0j, 1 + 0j)
    x = 0.5
    expect = 0.75 ** 0.5 * math.log(2) * poisson_kernel(UNIT_DISC, x, 1) / poisson_kernel(UNIT_DISC, 0, 1)
    assert psi_density(t, 0.5, x) == pytest.approx(expect)
    assert psi_density(t, 0.5, 2.0) == 0.0


# Simplex integrals


def _divided_difference(a, logs):
    # Hermite-Genocchi: the simplex integral of exp(a * sum t_k l_k) is a^(r-1) times
    # the divided difference of exp at the points a * l_k.
    pts = [a * l for l in logs]
    table = [math.exp(p) for p in pts]
    r = len(pts)
    for level in range(1, r):
        table = [(table[i + 1] - table[i]) / (pts[i + level] - pts[i]) for i in range(r - level)]
    return a ** (r - 1) * table[0]


def test_simplex_closed_form_pair():
    assert simplex_product_integral(1.0, [1.0, math.e]) == pytest.approx(math.e - 1, rel=1e-14)
    assert simplex_product_integral(0.7, [2.0]) == pytest.approx(2.0 ** 0.7)
    # Equal coefficients: volume a times c^a.
    assert simplex_product_integral(0.5, [3.0, 3.0]) == pytest.approx(0.5 * 3.0 ** 0.5, rel=1e-14)


def test_simplex_nearly_equal_coefficients_continuous():
    a, c = 1.2, 2.0
    v0 = simplex_product_integral(a, [c, c])
    for eps in (1e-4, 1e-6, 1e-7, 1e-9):
        assert simplex_product_integral(a, [c, c * (1 + eps)]) == pytest.approx(v0, rel=2 * eps + 1e-14)


def test_simplex_r3_and_r4_against_divided_differences():
    rng = np.random.default_rng(5)
    for r in (3, 4):
        for _ in range(5):
            a = rng.uniform(0.1, 1.9)
            logs = sorted(rng.uniform(-2, 2, size=r))
            val = simplex_product_integral(a, np.exp(logs))
            assert val == pytest.approx(_divided_difference(a, logs), rel=1e-7)


def test_simplex_volume():
    # All coefficients one: volume a^(r-1)/(r-1)!.
    assert simplex_product_integral(1.5, [1, 1, 1]) == pytest.approx(1.5 ** 2 / 2, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.95), st.lists(st.floats(0.1, 10.0), min_size=2, max_size=3))
def test_simplex_permutation_invariant(a, coeffs):
    v = simplex_product_integral(a, coeffs)
    assert simplex_product_integral(a, coeffs[::-1]) == v


def test_simplex_errors():
    with pytest.raises(ValueError):
        simplex_product_integral(2.0, [1.0, 2.0])
    with pytest.raises(ValueError):
        simplex_product_integral(0.5, [])
    with pytest.raises(ValueError):
        simplex_product_integral(0.5, [1.0, -1.0])


# Multipoint and martingale densities


class _Fixed:
    def __init__(self, cr, k, inside=True):
        self.cr, self.k, self.inside = cr, k, inside

    def contains(self, x):
        return self.inside

    def factors(self, x):
        return self.cr, self.k


def test_multipoint_density_single_triple_is_psi():
    t = TripleDXZ(UNIT_DISC, 0j, 1j)
    x = 0.2 - 0.3j
    assert multipoint_first_moment_density([t], 0.8, x) == pytest.approx(psi_density(t, 0.8, x))


def test_martingale_density_subset_sum():
    pieces = [_Fixed(0.5, 2.0), _Fixed(0.8, 1.5), _Fixed(0.3, 1.0, inside=False)]
    a = 0.6
    expect = (0.5 ** a * 2.0 + 0.8 ** a * 1.5
              + 2.0 * 1.5 * simplex_product_integral(a, [0.5, 0.8]))
    assert martingale_density(pieces, a, 0j, r_max=3) == pytest.approx(expect)
    assert martingale_density(pieces, a, 0j, r_max=1) == pytest.approx(0.5 ** a * 2.0 + 0.8 ** a * 1.5)


def test_martingale_tail_bound_dominates_dropped_terms():
    pieces = [_Fixed(0.4 + 0.1 * k, 1.0 + 0.2 * k) for k in range(5)]
    a = 0.9
    full = martingale_density(pieces, a, 0j, r_max=5)
    for r_max in (1, 2, 3, 4):
        dropped = full - martingale_density(pieces, a, 0j, r_max=r_max)
        assert 0 <= dropped <= martingale_tail_bound(pieces, a, 0j, r_max) * (1 + 1e-12)
    assert martingale_tail_bound(pieces, a, 0j, 5) == 0.0


def test_single_trajectory_density_is_psi():
    # One trajectory: the simplex is the point a, leaving CR^a G (Poisson ratio).
    t = TripleDXZ(UNIT_DISC, 0.1 + 0.2j, 1j)
    for x in (0.3 - 0.1j, -0.5 + 0.4j):
        assert multipoint_first_moment_density([t], 0.8, x) == pytest.approx(
            psi_density(t, 0.8, x), rel=1e-13)
