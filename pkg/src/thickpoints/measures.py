"""Thick-point measures built from simulated walks."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .constants import atom_weight, chaos_prefactor, thick_threshold
from .lattice import LatticeDomain
from .walk import WalkSample, split_at_first_exit

logger = logging.getLogger(__name__)

_OFF = 1 << 30
_SPAN = 1 << 31

Region = Callable[[np.ndarray], np.ndarray]


def site_keys(sites: np.ndarray) -> np.ndarray:
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    return (sites[:, 0] + _OFF) * _SPAN + (sites[:, 1] + _OFF)


def keys_to_sites(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return np.column_stack([keys // _SPAN - _OFF, keys % _SPAN - _OFF])


@dataclass(frozen=True)
class ThickPointMeasure:
    """Equal-weight atoms on thick sites; each atom weighs ``log N / N^(2-a)``."""

    sites: np.ndarray
    N: int
    a: float
    mode: str = "single"
    indices: tuple = ()

    @property
    def weight(self) -> float:
        return atom_weight(self.N, self.a)

    @property
    def count(self) -> int:
        return len(self.sites)

    @property
    def total_mass(self) -> float:
        return self.count * self.weight

    def points(self) -> np.ndarray:
        return (self.sites[:, 0] + 1j * self.sites[:, 1]) / self.N

    def mass(self, region: Region | None = None) -> float:
        if region is None:
            return self.total_mass
        return restrict(self, region).total_mass

    def keys(self) -> np.ndarray:
        return site_keys(self.sites)

    def write(self, csv_path, json_path=None, seed=None):
        """Atoms as ``x,y,weight`` CSV plus a JSON header file."""
        w = f"{self.weight:.17g}"
        with open(csv_path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["x", "y", "weight"])
            for x, y in self.sites:
                out.writerow([int(x), int(y), w])
        if json_path is not None:
            header = {"N": self.N, "a": self.a, "mode": self.mode, "seed": seed,
                      "total_mass": float(f"{self.total_mass:.17g}")}
            with open(json_path, "w") as fh:
                json.dump(header, fh, sort_keys=True, indent=2)
                fh.write("\n")



def thick_point_measure(samples: Sequence[WalkSample], a: float, I: Sequence[int] | None = None,
                        mode: str | None = None) -> ThickPointMeasure:
    """Sites where the trajectories in ``I`` jointly reach the thickness level.

    A site is an atom iff the summed local time of the trajectories in ``I``
    reaches ``g a log^2 N`` and every one of them visits it.
    """
    if not samples:
        raise ValueError("no samples")
    I = tuple(range(len(samples))) if I is None else tuple(I)
    if not I:
        raise ValueError("index set I must be nonempty")
    Ns = {samples[i].domain.N for i in I}
    if len(Ns) != 1:
        raise ValueError("samples disagree on the scale N")
    N = Ns.pop()
    if mode is None:
        mode = "single" if len(I) == 1 else "multipoint"
    thr = thick_threshold(N, a)
    if len(I) == 1:
        ws = samples[I[0]]
        return ThickPointMeasure(ws.sites[ws.local_times >= thr], N, a, mode, I)
    keys = np.concatenate([site_keys(samples[i].sites) for i in I])
    times = np.concatenate([samples[i].local_times for i in I])
    uniq, inv, hits = np.unique(keys, return_inverse=True, return_counts=True)
    total = np.zeros(len(uniq))
    np.add.at(total, inv, times)
    # Each sample lists a site once, so hits == |I| means all trajectories visited it.
    atom = (hits == len(I)) & (total >= thr)
    return ThickPointMeasure(keys_to_sites(uniq[atom]), N, a, mode, I)


def thick_point_count(ws: WalkSample, a: float) -> int:
    """Number of sites whose local time reaches ``(2/pi) a log^2 N``."""
    return int(np.count_nonzero(ws.local_times >= thick_threshold(ws.domain.N, a)))


def restrict(m: ThickPointMeasure, region: Region) -> ThickPointMeasure:
    """Keep the atoms whose rescaled position satisfies ``region``."""
    if m.count == 0:
        return m
    keep = np.asarray(region(m.points()), dtype=bool)
    return ThickPointMeasure(m.sites[keep], m.N, m.a, m.mode, m.indices)


def disc_region(center=0j, radius=1.0) -> Region:
    center = complex(center)
    return lambda pts: np.abs(np.asarray(pts) - center) < radius


def box_region(x0, y0, x1, y1) -> Region:
    def inside(pts):
        pts = np.asarray(pts)
        return (pts.real >= x0) & (pts.real < x1) & (pts.imag >= y0) & (pts.imag < y1)
    return inside


class MarkovDecomposition(NamedTuple):
    first: ThickPointMeasure
    second: ThickPointMeasure
    cross: ThickPointMeasure
    exact: bool
    split_site: tuple


def _lookup(ws: WalkSample, keys):
    own = site_keys(ws.sites)
    out = np.zeros(len(keys))
    if len(own) == 0:
        return out
    pos = np.minimum(np.searchsorted(own, keys), len(own) - 1)
    hit = own[pos] == keys
    out[hit] = ws.local_times[pos[hit]]
    return out


def _local_time_pair(ws, first, second):
    keys = np.union1d(site_keys(first.sites), site_keys(second.sites))
    return keys, _lookup(first, keys), _lookup(second, keys)


def markov_decompose(ws: WalkSample, sub: LatticeDomain, a: float) -> MarkovDecomposition:
    """Split the thick points of ``ws`` by which piece of the path made them thick.

    The path is cut at its first exit from ``sub``. An atom is thick for the
    first piece alone, for the second piece alone, or comes from both pieces
    together. ``exact`` records that these three atom sets partition the
    atoms of ``ws``.
    """
    first, second, Y = split_at_first_exit(ws, sub)
    N = ws.domain.N
    thr = thick_threshold(N, a)
    keys, l0, l1 = _local_time_pair(ws, first, second)
    only_first = (l0 >= thr) & (l1 == 0.0)
    only_second = (l1 >= thr) & (l0 == 0.0)
    both = (l0 > 0.0) & (l1 > 0.0) & (l0 + l1 >= thr)
    full = site_keys(ws.sites[ws.local_times >= thr])
    parts = [keys[only_first], keys[only_second], keys[both]]
    union = np.concatenate(parts)
    exact = len(union) == len(np.unique(union)) and np.array_equal(np.sort(union), full)
    if not exact:
        logger.error("thick points of the two pieces do not partition the full set (stream %s)",
                     ws.stream)
    mk = [ThickPointMeasure(keys_to_sites(p), N, a, mode) for p, mode in
          zip(parts, ("conditioned", "conditioned", "multipoint"))]
    return MarkovDecomposition(*mk, exact, Y)


def thickness_split(ws: WalkSample, sub: LatticeDomain, a: float) -> np.ndarray:
    """Share of the local time contributed by the first piece at each cross atom."""
    first, second, _ = split_at_first_exit(ws, sub)
    thr = thick_threshold(ws.domain.N, a)
    _, l0, l1 = _local_time_pair(ws, first, second)
    both = (l0 > 0.0) & (l1 > 0.0) & (l0 + l1 >= thr)
    return l0[both] / (l0[both] + l1[both])


def integrate_over_disc(fn, center=0j, radius=1.0, singular_at=None) -> float:
    """Integral of ``fn`` over a disc, in polar coordinates about ``singular_at`` when it lies inside."""
    center = complex(center)
    pole = center if singular_at is None else complex(singular_at)
    if 1e-14 < abs(pole - center) < radius:
        # Integrate in a polar frame around the pole, clipping rays at the disc edge.
        d = pole - center

        def rmax(theta):
            e = np.exp(1j * theta)
            b = (d * np.conj(e)).real
            return -b + math.sqrt(b * b - (abs(d) ** 2 - radius ** 2))

        val, _ = integrate.dblquad(lambda r, t: fn(pole + r * np.exp(1j * t)) * r,
                                   0.0, 2 * math.pi, 0.0, rmax, epsabs=1e-10, epsrel=1e-9)
        return val
    val, _ = integrate.dblquad(lambda r, t: fn(center + r * np.exp(1j * t)) * r,
                               0.0, 2 * math.pi, 0.0, radius, epsabs=1e-10, epsrel=1e-9)
    return val


def unconditioned_first_moment_target(domain, x0, a, center=0j, radius=0.5) -> float:
    """Limit of ``E[mu(A)]`` for ``A`` a disc: ``exp(c0 a/g) int_A CR^a G(x0, .)``."""
    from .continuum import conformal_radius, green_function

    def dens(x):
        if not domain.contains(x) or x == x0:
            return 0.0
        return float(conformal_radius(domain, x)) ** a * float(green_function(domain, x0, x))

    return chaos_prefactor(a) * integrate_over_disc(dens, center, radius, singular_at=x0)


def conditioned_first_moment_target(triple, a, center=0j, radius=0.5) -> float:
    """Limit of ``E[mu(A)]`` under exit conditioning: ``exp(c0 a/g) int_A psi``."""
    from .continuum import psi_density

    def dens(x):
        if x == triple.start:
            return 0.0
        return psi_density(triple, a, x)

    return chaos_prefactor(a) * integrate_over_disc(dens, center, radius, singular_at=triple.start)


def exact_discrete_first_moment(ld: LatticeDomain, start, a: float, region: Region,
                                exit_site=None) -> float:
    """``E[mu(A)]`` at fixed ``N`` from Green functions, no simulation.

    Started at ``start``, the local time at ``x`` is zero unless ``x`` is hit,
    and then exponential with mean ``G(x, x)``, independent of the exit site.
    """
    from .solver import discrete_green_row, green_diagonal, harmonic_field

    N = ld.N
    pts = (ld.interior_sites[:, 0] + 1j * ld.interior_sites[:, 1]) / N
    inside = np.asarray(region(pts), dtype=bool)
    sites = ld.interior_sites[inside]
    if len(sites) == 0:
        return 0.0
    idx = np.array([ld.index_of(s) for s in sites])
    g_from_start = discrete_green_row(ld, start).values[idx]
    diag = green_diagonal(ld, sites)
    prob = g_from_start / diag * np.exp(-thick_threshold(N, a) / diag)
    if exit_site is not None:
        h = harmonic_field(ld, exit_site)
        prob = prob * h.values[idx] / h.at(start)
    return float(atom_weight(N, a) * prob.sum())


def expected_local_time_conditioned(ld: LatticeDomain, start, exit_site, x) -> float:
    """``E[l_x]`` for the walk from ``start`` conditioned to exit at ``exit_site``."""
    from .solver import green, harmonic_field

    h = harmonic_field(ld, exit_site)
    return green(ld, start, x) * h.at(x) / h.at(start)


def normalized_thick_count(ws: WalkSample, a: float) -> float:
    N = ws.domain.N
    return thick_point_count(ws, a) * atom_weight(N, a)

