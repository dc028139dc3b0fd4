"""Discretisation of planar domains into nearest-neighbour lattice domains."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .continuum import NiceDomain

OUTSIDE, INTERIOR, BOUNDARY = 0, 1, 2

_CROSS = ndimage.generate_binary_structure(2, 1)

# Slack on the distance-one margin so sites exactly one unit from the boundary
# survive rounding in the rescaled distance.
MARGIN_TOL = 1e-9


class DiscretizationError(ValueError):
    pass


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertices in order (either orientation)."""

    vertices: tuple[complex, ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError("a polygon needs at least three vertices")
        object.__setattr__(self, "vertices", tuple(complex(v) for v in self.vertices))

    @classmethod
    def rectangle(cls, x0, y0, x1, y1):
        return cls((complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)))

    def _edges(self):
        v = np.array(self.vertices)
        return v, np.roll(v, -1)

    def contains(self, w):
        w = np.asarray(w, dtype=complex)
        px, py = w.real[..., None], w.imag[..., None]
        a, b = self._edges()
        crosses = ((a.imag > py) != (b.imag > py)) & (
            px < (b.real - a.real) * (py - a.imag) / (b.imag - a.imag + (b.imag == a.imag)) + a.real)
        return np.count_nonzero(crosses, axis=-1) % 2 == 1

    def distance_to_boundary(self, w):
        w = np.asarray(w, dtype=complex)[..., None]
        a, b = self._edges()
        ab = b - a
        t = np.clip(((w - a) * np.conj(ab)).real / np.abs(ab) ** 2, 0.0, 1.0)
        dist = np.abs(w - (a + t * ab)).min(axis=-1)
        return np.where(self.contains(w[..., 0]), dist, -dist)

    def bounds(self):
        v = np.array(self.vertices)
        return v.real.min(), v.imag.min(), v.real.max(), v.imag.max()


class LatticeDomain:
    """A finite set of lattice sites split into walkable interior and absorbing boundary.

    ``mask[i, j]`` classifies site ``(origin[0] + i, origin[1] + j)`` as
    ``OUTSIDE``, ``INTERIOR`` or ``BOUNDARY``. The mask always carries a one-site
    frame of ``OUTSIDE`` so every neighbour lookup from a domain site is in range.
    """

    def __init__(self, N: int, origin, mask: np.ndarray, x0_site):
        self.N = int(N)
        self.origin = (int(origin[0]), int(origin[1]))
        mask = np.ascontiguousarray(mask, dtype=np.int8)
        mask.setflags(write=False)
        self.mask = mask
        self.x0_site = (int(x0_site[0]), int(x0_site[1]))

        ox, oy = self.origin
        ii, jj = np.nonzero(mask == INTERIOR)
        self.interior_sites = np.column_stack([ii + ox, jj + oy]).astype(np.int64)
        bi, bj = np.nonzero(mask == BOUNDARY)
        self.boundary_sites = np.column_stack([bi + ox, bj + oy]).astype(np.int64)

        self.interior_index = np.full(mask.shape, -1, dtype=np.int64)
        self.interior_index[ii, jj] = np.arange(len(ii))
        self.boundary_index = np.full(mask.shape, -1, dtype=np.int64)
        self.boundary_index[bi, bj] = np.arange(len(bi))
        self.interior_index.setflags(write=False)
        self.boundary_index.setflags(write=False)
        self._key = None

    @classmethod
    def from_sites(cls, N, sites, x0_site):
        """Build a domain from its full site set; the boundary is recomputed."""
        sites = np.asarray(list(sites), dtype=np.int64).reshape(-1, 2)
        if len(sites) == 0:
            raise DiscretizationError("empty site set")
        lo = sites.min(axis=0) - 1
        hi = sites.max(axis=0) + 1
        member = np.zeros(tuple(hi - lo + 1), dtype=bool)
        member[sites[:, 0] - lo[0], sites[:, 1] - lo[1]] = True
        return cls(N, tuple(lo), classify(member), x0_site)

    @property
    def n_interior(self) -> int:
        return len(self.interior_sites)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_sites)

    @property
    def key(self) -> str:
        """Content digest; equal domains share cache entries."""
        if self._key is None:
            h = hashlib.sha1()
            h.update(np.array([self.N, len(self.interior_sites)], dtype=np.int64).tobytes())
            h.update(self.interior_sites.tobytes())
            h.update(self.boundary_sites.tobytes())
            self._key = h.hexdigest()
        return self._key

    def _local(self, site):
        i, j = int(site[0]) - self.origin[0], int(site[1]) - self.origin[1]
        if 0 <= i < self.mask.shape[0] and 0 <= j < self.mask.shape[1]:
            return i, j
        return None

    def kind(self, site) -> int:
        loc = self._local(site)
        return OUTSIDE if loc is None else int(self.mask[loc])

    def is_interior(self, site) -> bool:
        return self.kind(site) == INTERIOR

    def is_boundary(self, site) -> bool:
        return self.kind(site) == BOUNDARY

    def contains_site(self, site) -> bool:
        return self.kind(site) != OUTSIDE

    def index_of(self, site) -> int:
        """Dense index of an interior site."""
        loc = self._local(site)
        idx = -1 if loc is None else int(self.interior_index[loc])
        if idx < 0:
            raise KeyError(f"site {tuple(site)} is not interior")
        return idx

    def boundary_index_of(self, site) -> int:
        loc = self._local(site)
        idx = -1 if loc is None else int(self.boundary_index[loc])
        if idx < 0:
            raise KeyError(f"site {tuple(site)} is not a boundary site")
        return idx

    def site_of_point(self, x) -> tuple[int, int]:
        x = complex(x)
        return math.floor(self.N * x.real), math.floor(self.N * x.imag)

    def member_mask(self) -> np.ndarray:
        return self.mask != OUTSIDE

    def same_sites(self, other: LatticeDomain) -> bool:
        return (np.array_equal(self.interior_sites, other.interior_sites)
                and np.array_equal(self.boundary_sites, other.boundary_sites))

    def __repr__(self):
        return (f"LatticeDomain(N={self.N}, interior={self.n_interior}, "
                f"boundary={self.n_boundary}, x0={self.x0_site})")

    def write_sites(self, path):
        """Write one ``x y flag`` line per site, interior sites first."""
        lines = [f"# N={self.N} x0={self.x0_site[0]},{self.x0_site[1]}"]
        lines += [f"{x} {y} interior" for x, y in self.interior_sites]
        lines += [f"{x} {y} boundary" for x, y in self.boundary_sites]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_sites(cls, path):
        N, x0 = None, None
        sites, flags = [], {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    if k == "N":
                        N = int(v)
                    elif k == "x0":
                        x0 = tuple(int(c) for c in v.split(","))
                continue
            x, y, flag = line.split()
            if flag not in ("interior", "boundary"):
                raise ValueError(f"unknown site flag {flag!r}")
            sites.append((int(x), int(y)))
            flags[(int(x), int(y))] = flag
        ld = cls.from_sites(N, sites, x0)
        for s, flag in flags.items():
            if (flag == "boundary") != ld.is_boundary(s):
                raise ValueError(f"site {s} flagged {flag} but classifies otherwise")
        return ld


def classify(member: np.ndarray) -> np.ndarray:
    """Turn a membership array into an OUTSIDE/INTERIOR/BOUNDARY mask.

    A member is boundary iff one of its four neighbours is not a member.
    ``member`` must have a false frame.
    """
    member = np.asarray(member, dtype=bool)
    if member[0].any() or member[-1].any() or member[:, 0].any() or member[:, -1].any():
        raise ValueError("membership array must have an empty frame")
    inner = member.copy()
    inner[1:-1, 1:-1] &= (member[2:, 1:-1] & member[:-2, 1:-1]
                          & member[1:-1, 2:] & member[1:-1, :-2])
    mask = np.zeros(member.shape, dtype=np.int8)
    mask[member] = BOUNDARY
    mask[inner] = INTERIOR
    return mask


def _bounds(domain):
    if isinstance(domain, Polygon):
        return domain.bounds()
    c, rho = domain.circle()
    return c.real - rho, c.imag - rho, c.real + rho, c.imag + rho


def discretize(domain: NiceDomain | Polygon, N: int, x0) -> LatticeDomain:
    """Lattice approximation of ``domain`` at mesh ``1/N`` seen from ``x0``.

    Keeps the lattice points of ``N * domain`` lying at Euclidean distance at
    least one from the scaled boundary and reachable from ``floor(N x0)`` by
    nearest-neighbour steps through such points.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    x0 = complex(x0)
    xmin, ymin, xmax, ymax = _bounds(domain)
    ox, oy = math.floor(N * xmin) - 2, math.floor(N * ymin) - 2
    nx, ny = math.ceil(N * xmax) + 3 - ox, math.ceil(N * ymax) + 3 - oy
    X, Y = np.meshgrid(np.arange(ox, ox + nx), np.arange(oy, oy + ny), indexing="ij")
    pts = (X + 1j * Y) / N
    good = domain.contains(pts) & (N * domain.distance_to_boundary(pts) >= 1.0 - MARGIN_TOL)
    good[0], good[-1], good[:, 0], good[:, -1] = False, False, False, False

    start = (math.floor(N * x0.real), math.floor(N * x0.imag))
    si, sj = start[0] - ox, start[1] - oy
    if not (0 <= si < nx and 0 <= sj < ny) or not good[si, sj]:
        raise DiscretizationError(f"start site {start} does not survive discretisation at N={N}")
    labels, _ = ndimage.label(good, structure=_CROSS)
    member = labels == labels[si, sj]
    mask = classify(member)
    if not (mask == INTERIOR).any():
        raise DiscretizationError(f"no interior sites at N={N}")
    return LatticeDomain(N, (ox, oy), mask, start)


def nearest_boundary_site(ld: LatticeDomain, z) -> tuple[int, int]:
    """Boundary site closest to ``N z``; ties go to the lexicographically smallest site."""
    if ld.n_boundary == 0:
        raise DiscretizationError("domain has no boundary sites")
    z = complex(z) * ld.N
    b = ld.boundary_sites
    d2 = (b[:, 0] - z.real) ** 2 + (b[:, 1] - z.imag) ** 2
    order = np.lexsort((b[:, 1], b[:, 0], d2))
    x, y = b[order[0]]
    return int(x), int(y)


def strip_subdomain(ld: LatticeDomain, center_x: float, half_width: float, anchor) -> LatticeDomain:
    """Connected component through ``anchor`` of the domain cut to a vertical strip.

    Keeps sites with ``|x/N - center_x| < half_width``; the boundary is recomputed.
    """
    anchor = (int(anchor[0]), int(anchor[1]))
    if not ld.contains_site(anchor) or not abs(anchor[0] / ld.N - center_x) < half_width:
        raise ValueError(f"anchor {anchor} is not inside the strip slice")
    member = ld.member_mask()
    xs = np.arange(ld.origin[0], ld.origin[0] + member.shape[0]) / ld.N
    inside = np.abs(xs - center_x) < half_width
    cut = member & inside[:, None]
    labels, _ = ndimage.label(cut, structure=_CROSS)
    comp = labels == labels[anchor[0] - ld.origin[0], anchor[1] - ld.origin[1]]
    if np.array_equal(comp, member):
        return ld
    return LatticeDomain(ld.N, ld.origin, classify(comp), anchor)

