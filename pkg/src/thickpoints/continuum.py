"""Continuum potential theory on discs and Möbius images of the unit disc.

Every quantity is written through a conformal map ``f`` of the domain onto
the unit disc, so the same code serves every domain kind that can supply
``f`` and ``f'`` in closed form.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import integrate

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-8
INTERIOR_MARGIN = 1e-8
_SERIES_CUTOFF = 1e-6


class DomainError(ValueError):
    """A point was required to be interior (or on the boundary) and is not."""


class SingularityError(ValueError):
    """Evaluation at the logarithmic singularity of a Green function."""


class NiceDomain:
    """Simply connected domain with a closed-form conformal map onto the unit disc."""

    def f(self, w):
        raise NotImplementedError

    def fprime(self, w):
        raise NotImplementedError

    def finv(self, u):
        raise NotImplementedError

    def circle(self) -> tuple[complex, float]:
        """Centre and radius of the domain, which is always a disc here."""
        raise NotImplementedError

    def contains(self, w):
        return np.abs(self.f(w)) < 1.0

    def boundary_point(self, theta):
        return self.finv(np.exp(1j * np.asarray(theta, dtype=float)))

    def distance_to_boundary(self, w):
        c, rho = self.circle()
        return rho - np.abs(np.asarray(w) - c)


@dataclass(frozen=True)
class Disc(NiceDomain):
    center: complex = 0j
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"disc radius must be positive, got {self.radius}")

    def f(self, w):
        return (np.asarray(w, dtype=complex) - self.center) / self.radius

    def fprime(self, w):
        return np.full(np.shape(w), 1.0 / self.radius, dtype=complex)[()]

    def finv(self, u):
        return self.center + self.radius * np.asarray(u, dtype=complex)

    def circle(self):
        return complex(self.center), float(self.radius)


UNIT_DISC = Disc()


@dataclass(frozen=True)
class MobiusImage(NiceDomain):
    """Image ``M(base)`` of a disc under ``M(w) = (alpha w + beta)/(gamma w + delta)``.

    The pole of ``M`` must lie outside the closed base disc so the image is bounded.
    """

    base: Disc
    alpha: complex = 1.0
    beta: complex = 0.0
    gamma: complex = 0.0
    delta: complex = 1.0

    def __post_init__(self):
        det = self.alpha * self.delta - self.beta * self.gamma
        if abs(det) < 1e-14:
            raise ValueError("degenerate Möbius map")
        if self.gamma != 0:
            pole = -self.delta / self.gamma
            if abs(self.base.f(pole)) <= 1.0 + 1e-12:
                raise ValueError("Möbius pole inside the closed base disc; image is unbounded")

    def _minv(self, w):
        w = np.asarray(w, dtype=complex)
        return (self.delta * w - self.beta) / (-self.gamma * w + self.alpha)

    def f(self, w):
        return self.base.f(self._minv(w))

    def fprime(self, w):
        w = np.asarray(w, dtype=complex)
        det = self.alpha * self.delta - self.beta * self.gamma
        return self.base.fprime(self._minv(w)) * det / (-self.gamma * w + self.alpha) ** 2

    def finv(self, u):
        v = self.base.finv(u)
        return (self.alpha * v + self.beta) / (self.gamma * v + self.delta)

    def circle(self):
        p = self.boundary_point(np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3]))
        return _circumcircle(*p)


def _circumcircle(p1, p2, p3):
    # Centre solves |c - p1| = |c - p2| = |c - p3|.
    a = np.array([[2 * (p2 - p1).real, 2 * (p2 - p1).imag],
                  [2 * (p3 - p1).real, 2 * (p3 - p1).imag]])
    b = np.array([abs(p2) ** 2 - abs(p1) ** 2, abs(p3) ** 2 - abs(p1) ** 2])
    cx, cy = np.linalg.solve(a, b)
    c = complex(cx, cy)
    return c, float(abs(p1 - c))


def _require_interior(d: NiceDomain, w, what="point"):
    fw = d.f(w)
    if np.any(np.abs(fw) >= 1.0 - INTERIOR_MARGIN):
        raise DomainError(f"{what} is not interior to the domain")
    return fw


def _require_boundary(d: NiceDomain, z):
    fz = d.f(z)
    if np.any(np.abs(np.abs(fz) - 1.0) > BOUNDARY_TOL):
        raise DomainError("exit point is not on the domain boundary")
    return fz


def conformal_radius(d: NiceDomain, x):
    """Conformal radius ``(1 - |f(x)|^2) / |f'(x)|`` of ``d`` seen from ``x``."""
    fx = _require_interior(d, x)
    return (1.0 - np.abs(fx) ** 2) / np.abs(d.fprime(x))


def green_function(d: NiceDomain, x, y):
    """Dirichlet Green function normalised as ``-log|x - y|`` near the diagonal."""
    fx = _require_interior(d, x)
    fy = _require_interior(d, y)
    gap = np.abs(fy - fx)
    if np.any(gap == 0.0):
        raise SingularityError("Green function evaluated on the diagonal")
    return np.log(np.abs(1.0 - fx * np.conj(fy)) / gap)


def poisson_kernel(d: NiceDomain, x, z):
    """Density of the exit point at boundary point ``z`` for Brownian motion from ``x``."""
    fx = _require_interior(d, x)
    fz = _require_boundary(d, z)
    return np.abs(d.fprime(z)) * (1.0 - np.abs(fx) ** 2) / (2 * np.pi * np.abs(fx - fz) ** 2)


@dataclass(frozen=True)
class TripleDXZ:
    """A domain with a start point and an exit point on its boundary."""

    domain: NiceDomain
    start: complex
    exit: complex

    def __post_init__(self):
        if abs(self.domain.f(self.start)) >= 1.0 - INTERIOR_MARGIN:
            raise DomainError("start point must lie strictly inside the domain")
        _require_boundary(self.domain, self.exit)

    def contains(self, x) -> bool:
        return bool(abs(self.domain.f(x)) < 1.0)

    def factors(self, x) -> tuple[float, float]:
        """Conformal radius at ``x`` and the thickness-free kernel ``G(start, x) H(x, exit)/H(start, exit)``."""
        d = self.domain
        kernel = (green_function(d, self.start, x) * poisson_kernel(d, x, self.exit)
                  / poisson_kernel(d, self.start, self.exit))
        return float(conformal_radius(d, x)), float(kernel)


def psi_density(t: TripleDXZ, a: float, x) -> float:
    """First-moment density of the exit-conditioned chaos measure at ``x``; zero off the domain."""
    if not t.contains(x):
        return 0.0
    cr, kernel = t.factors(x)
    return cr ** a * kernel


def _pair_integral(a, lo, hi):
    # Integral over t in (0, a) of exp(lo * t + hi * (a - t)), with lo <= hi.
    d = hi - lo
    if d < _SERIES_CUTOFF:
        ad = a * d
        return a * math.exp(a * lo) * (1.0 + ad / 2.0 + ad * ad / 6.0 + ad ** 3 / 24.0)
    return math.exp(a * lo) * math.expm1(a * d) / d


def _simplex_recursive(a, logs):
    if a <= 0.0:
        return 0.0
    if len(logs) == 1:
        return math.exp(a * logs[0])
    if len(logs) == 2:
        return _pair_integral(a, logs[0], logs[1])
    last, rest = logs[-1], logs[:-1]
    val, _ = integrate.quad(lambda t: math.exp(last * t) * _simplex_recursive(a - t, rest),
                            0.0, a, epsabs=1e-9, epsrel=1e-11, limit=200)
    return val


def simplex_product_integral(a: float, coeffs: Sequence[float]) -> float:
    """Integrate ``prod_k c_k^{a_k}`` over the simplex ``{a_k > 0, sum a_k = a}``.

    The measure is Lebesgue measure in the first ``r - 1`` coordinates; for a
    single coefficient the simplex is the point ``a`` and the result is ``c^a``.
    Coefficients are sorted first so the value is exactly permutation invariant.
    """
    if not 0.0 < a < 2.0:
        raise ValueError(f"thickness must lie in (0, 2), got {a}")
    coeffs = list(coeffs)
    if not coeffs:
        raise ValueError("need at least one coefficient")
    if any(not c > 0 for c in coeffs):
        raise ValueError("simplex coefficients must be positive")
    logs = sorted(math.log(c) for c in coeffs)
    return _simplex_recursive(a, logs)


def multipoint_first_moment_density(triples: Sequence[TripleDXZ], a: float, x) -> float:
    """First-moment density of the measure of thick points shared by all trajectories."""
    if not triples:
        raise ValueError("need at least one triple")
    factors = []
    for t in triples:
        if not t.contains(x):
            return 0.0
        factors.append(t.factors(x))
    return _subset_term(a, factors)


def _subset_term(a, factors):
    kernel = 1.0
    for _, k in factors:
        kernel *= k
    if kernel == 0.0:
        return 0.0
    return kernel * simplex_product_integral(a, [cr for cr, _ in factors])


class PsiPiece(Protocol):
    """Anything that can say whether it covers ``x`` and give its density factors there."""

    def contains(self, x) -> bool: ...

    def factors(self, x) -> tuple[float, float]: ...


def martingale_density(pieces: Sequence[PsiPiece], a: float, x, r_max: int = 3) -> float:
    """Density at ``x`` of the conditional-expectation measure given the strip hitting points.

    Sums the multipoint first-moment density over every subset of covering
    pieces of size at most ``r_max``.
    """
    if r_max < 1:
        raise ValueError(f"r_max must be >= 1, got {r_max}")
    covering = [p.factors(x) for p in pieces if p.contains(x)]
    total = 0.0
    for r in range(1, min(r_max, len(covering)) + 1):
        for subset in itertools.combinations(covering, r):
            total += _subset_term(a, subset)
    if len(covering) > r_max:
        logger.debug("martingale density at %s: dropped tail <= %.3e",
                     x, _tail_bound(a, covering, r_max))
    return total


def martingale_tail_bound(pieces: Sequence[PsiPiece], a: float, x, r_max: int = 3) -> float:
    """Upper bound on the subset terms of size above ``r_max`` dropped by :func:`martingale_density`."""
    if r_max < 1:
        raise ValueError(f"r_max must be >= 1, got {r_max}")
    covering = [p.factors(x) for p in pieces if p.contains(x)]
    return _tail_bound(a, covering, r_max)


def _tail_bound(a, covering, r_max):
    # Each subset term is at most prod(kernels) * max(1, max CR)^a * vol E(a, r).
    m = len(covering)
    if m <= r_max:
        return 0.0
    crmax = max(1.0, max(cr for cr, _ in covering))
    esym = np.zeros(m + 1)
    esym[0] = 1.0
    for _, k in covering:
        esym[1:] = esym[1:] + k * esym[:-1]
    bound = 0.0
    for r in range(r_max + 1, m + 1):
        bound += esym[r] * crmax ** a * a ** (r - 1) / math.factorial(r - 1)
    return float(bound)
