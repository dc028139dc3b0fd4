"""Discrete potential theory on lattice domains.

All fields live on the interior sites of a :class:`~thickpoints.lattice.LatticeDomain`
and vanish on its boundary. The linear operator is ``L = 4 I - A`` with ``A`` the
adjacency matrix among interior sites, so ``L G(., y) = 4 e_y`` gives the expected
number of visits to ``y``, which is also the expected local time of the rate-one
continuous-time walk.
"""

from __future__ import annotations

import csv
import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import GREEN_DIAGONAL_OFFSET, GREEN_LOG_SLOPE
from .continuum import NiceDomain, conformal_radius
from .lattice import INTERIOR, LatticeDomain, discretize

logger = logging.getLogger(__name__)

DEFAULT_RTOL = 1e-10
DIRECT_LIMIT = 250_000
_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class SolverError(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class PotentialField:
    domain: LatticeDomain
    source: tuple
    values: np.ndarray
    residual: float

    def at(self, site) -> float:
        """Field value at a site; zero off the interior."""
        if not self.domain.is_interior(site):
            return 0.0
        return float(self.values[self.domain.index_of(site)])

    def to_grid(self) -> np.ndarray:
        grid = np.zeros(self.domain.mask.shape)
        grid[self.domain.mask == INTERIOR] = self.values
        return grid

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for (x, y), v in zip(self.domain.interior_sites, self.values):
                w.writerow([int(x), int(y), f"{v:.17g}"])


def neighbour_indices(ld: LatticeDomain, sites: np.ndarray) -> np.ndarray:
    """Interior index of each of the four neighbours of ``sites``; ``-1`` if not interior."""
    out = np.empty((len(sites), 4), dtype=np.int64)
    for k, (dx, dy) in enumerate(_STEPS):
        out[:, k] = ld.interior_index[sites[:, 0] + dx - ld.origin[0], sites[:, 1] + dy - ld.origin[1]]
    return out


def laplacian(ld: LatticeDomain, exclude=()) -> sp.csr_matrix:
    """``4 I - A`` on interior sites, optionally with extra sites made absorbing.

    Rows and columns of excluded sites are replaced by identity rows so indices
    stay aligned with ``ld.interior_sites``.
    """
    n = ld.n_interior
    nb = neighbour_indices(ld, ld.interior_sites)
    keep = np.ones(n, dtype=bool)
    for s in exclude:
        keep[ld.index_of(s)] = False
    rows = np.repeat(np.arange(n), 4)
    cols = nb.ravel()
    ok = (cols >= 0) & keep[rows] & keep[np.maximum(cols, 0)]
    A = sp.csr_matrix((np.ones(ok.sum()), (rows[ok], cols[ok])), shape=(n, n))
    diag = np.where(keep, 4.0, 1.0)
    return (sp.diags(diag) - A).tocsr()


class _Factorizations:
    """Small LRU of sparse LU factorisations keyed by domain digest."""

    def __init__(self, maxsize=4):
        self.maxsize = maxsize
        self._lu = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key, matrix_fn):
        with self._lock:
            if key in self._lu:
                self._lu.move_to_end(key)
                return self._lu[key]
        lu = spla.splu(matrix_fn().tocsc(), permc_spec="COLAMD")
        with self._lock:
            self._lu[key] = lu
            while len(self._lu) > self.maxsize:
                self._lu.popitem(last=False)
        return lu


_FACTORS = _Factorizations()


def _gauss_seidel(L, b, x, rtol, max_iter):
    # Plain forward sweeps; only reached when CG fails.
    D = L.diagonal()
    Lo = sp.tril(L, k=-1).tocsr()
    Up = sp.triu(L, k=1).tocsr()
    lower = (sp.diags(D) + Lo).tocsr()
    bnorm = np.linalg.norm(b) or 1.0
    for _ in range(max_iter):
        x = spla.spsolve_triangular(lower, b - Up @ x, lower=True)
        if np.linalg.norm(b - L @ x) <= rtol * bnorm:
            break
    return x


def solve(ld: LatticeDomain, rhs: np.ndarray, *, exclude=(), method="auto",
          rtol=DEFAULT_RTOL) -> tuple[np.ndarray, float]:
    """Solve ``L u = rhs`` on the interior; returns the solution and its relative residual.

    ``method`` is ``"direct"`` (cached sparse LU), ``"cg"`` (conjugate gradient,
    algebraic-multigrid preconditioned when pyamg is present) or ``"auto"``.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = ld.n_interior
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "cg"
    key = (ld.key, tuple(sorted(map(tuple, exclude))))
    if method == "direct":
        lu = _FACTORS.get(key, lambda: laplacian(ld, exclude))
        u = lu.solve(rhs)
        L = laplacian(ld, exclude) if exclude else _cached_laplacian(ld)
    elif method == "cg":
        L = laplacian(ld, exclude) if exclude else _cached_laplacian(ld)
        u = _pcg(L, rhs, rtol, ld)
    else:
        raise ValueError(f"unknown method {method!r}")
    bnorm = np.linalg.norm(rhs) or 1.0
    res = float(np.linalg.norm(L @ u - rhs) / bnorm)
    if res > rtol:
        raise SolverError("linear solve did not reach tolerance", res)
    return u, res


_LAPLACIANS = OrderedDict()


def _cached_laplacian(ld):
    L = _LAPLACIANS.get(ld.key)
    if L is None:
        L = laplacian(ld)
        _LAPLACIANS[ld.key] = L
        while len(_LAPLACIANS) > 4:
            _LAPLACIANS.popitem(last=False)
    return L


def _pcg(L, rhs, rtol, ld):
    max_iter = 50 * ld.N
    M = None
    try:
        import pyamg
        M = pyamg.smoothed_aggregation_solver(L, symmetry="symmetric").aspreconditioner(cycle="V")
    except ImportError:  # pragma: no cover
        pass
    u, info = spla.cg(L, rhs, rtol=rtol * 1e-2, atol=0.0, maxiter=max_iter, M=M)
    if info != 0:
        logger.warning("CG stopped with info=%d; falling back to Gauss-Seidel", info)
        u = _gauss_seidel(L, rhs, u, rtol, max_iter)
    return u


class GreenCache:
    """LRU cache of Green rows bounded by total bytes; safe for concurrent use."""

    def __init__(self, budget_bytes=512 * 2**20):
        self.budget = budget_bytes
        self._rows = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            row = self._rows.get(key)
            if row is not None:
                self._rows.move_to_end(key)
            return row

    def put(self, key, row):
        with self._lock:
            if key in self._rows:
                return
            self._rows[key] = row
            self._bytes += row.values.nbytes
            while self._bytes > self.budget and len(self._rows) > 1:
                _, old = self._rows.popitem(last=False)
                self._bytes -= old.values.nbytes

    def clear(self):
        with self._lock:
            self._rows.clear()
            self._bytes = 0


GREEN_CACHE = GreenCache()


def discrete_green_row(ld: LatticeDomain, y, method="auto") -> PotentialField:
    """``G(., y)``: expected local time at ``y`` before hitting the boundary, from each site."""
    y = (int(y[0]), int(y[1]))
    if not ld.is_interior(y):
        return PotentialField(ld, ("green", y), np.zeros(ld.n_interior), 0.0)
    key = (ld.key, y)
    row = GREEN_CACHE.get(key)
    if row is not None:
        # Same sites may come in a different frame; rebind to the caller's domain.
        return row if row.domain is ld else PotentialField(ld, row.source, row.values, row.residual)
    rhs = np.zeros(ld.n_interior)
    rhs[ld.index_of(y)] = 4.0
    u, res = solve(ld, rhs, method=method)
    row = PotentialField(ld, ("green", y), u, res)
    GREEN_CACHE.put(key, row)
    return row


def green(ld: LatticeDomain, x, y) -> float:
    return discrete_green_row(ld, y).at(x)


def _boundary_neighbour_weights(ld: LatticeDomain):
    # For every boundary site, interior neighbours (index or -1).
    return neighbour_indices(ld, ld.boundary_sites)


def harmonic_measure(ld: LatticeDomain, x) -> np.ndarray:
    """Exit distribution from ``x`` over ``ld.boundary_sites`` (same order)."""
    x = (int(x[0]), int(x[1]))
    if not ld.is_interior(x):
        raise ValueError(f"start {x} is not interior")
    g = discrete_green_row(ld, x).values
    nb = _boundary_neighbour_weights(ld)
    vals = np.where(nb >= 0, g[np.maximum(nb, 0)], 0.0)
    return vals.sum(axis=1) / 4.0


def harmonic_field(ld: LatticeDomain, target, method="auto") -> PotentialField:
    """``h(y) = P_y(exit at target)`` for every interior ``y``."""
    target = (int(target[0]), int(target[1]))
    if not ld.is_boundary(target):
        raise ValueError(f"exit target {target} is not a boundary site")
    rhs = np.zeros(ld.n_interior)
    for dx, dy in _STEPS:
        s = (target[0] + dx, target[1] + dy)
        if ld.is_interior(s):
            rhs[ld.index_of(s)] += 1.0
    u, res = solve(ld, rhs, method=method)
    return PotentialField(ld, ("harmonic", target), u, res)


def p_hit(ld: LatticeDomain, x, y) -> float:
    """``P_x(hit y before the boundary) = G(x, y) / G(y, y)``."""
    row = discrete_green_row(ld, y)
    gyy = row.at(y)
    if gyy <= 0.0:
        raise ValueError(f"{tuple(y)} is not interior")
    return row.at(x) / gyy


def avoid_hit_prob(ld: LatticeDomain, z, x, y) -> float:
    """``P_z(hit x before y and before the boundary)`` from single-site hitting probabilities."""
    if len({tuple(z), tuple(x), tuple(y)}) != 3:
        raise ValueError("z, x, y must be pairwise distinct")
    pzx, pzy = p_hit(ld, z, x), p_hit(ld, z, y)
    pxy, pyx = p_hit(ld, x, y), p_hit(ld, y, x)
    den = 1.0 - pxy * pyx
    if den < 1e-14:
        raise FloatingPointError(f"denominator {den:.3e} too small")
    return (pzx - pzy * pyx) / den


def hitting_probability(ld: LatticeDomain, z, target, avoid=()) -> float:
    """``P_z(hit target before any site of avoid and before the boundary)`` by a direct solve.

    ``target`` and ``avoid`` are made absorbing and the Dirichlet problem is
    solved afresh; no Green rows are used.
    """
    target = tuple(map(int, target))
    absorbing = [target, *(tuple(map(int, s)) for s in avoid)]
    rhs = np.zeros(ld.n_interior)
    rhs[ld.index_of(target)] = 1.0
    for dx, dy in _STEPS:
        s = (target[0] + dx, target[1] + dy)
        if ld.is_interior(s) and s not in absorbing:
            rhs[ld.index_of(s)] += 1.0
    u, _ = solve(ld, rhs, exclude=absorbing, method="direct")
    return float(u[ld.index_of(z)])


def green_diagonal(ld: LatticeDomain, sites) -> np.ndarray:
    """``G(s, s)`` for several sites using one factorisation."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    idx = np.array([ld.index_of(s) for s in sites], dtype=np.int64)
    if len(idx) == 0:
        return np.zeros(0)
    lu = _FACTORS.get((ld.key, ()), lambda: laplacian(ld))
    out = np.empty(len(idx))
    for start in range(0, len(idx), 256):
        chunk = idx[start:start + 256]
        B = np.zeros((ld.n_interior, len(chunk)))
        B[chunk, np.arange(len(chunk))] = 4.0
        X = lu.solve(B)
        out[start:start + 256] = X[chunk, np.arange(len(chunk))]
    return out


@dataclass
class GreenAsymptoticRow:
    N: int
    site: tuple
    green_diag: float
    centred: float
    target: float

    @property
    def deviation(self) -> float:
        return self.centred - self.target


def green_asymptotics_check(d: NiceDomain, x, N_list, method="auto") -> list[GreenAsymptoticRow]:
    """Tabulate ``G_N(floor(Nx), floor(Nx)) - g log N`` against ``g log CR(x) + c0``."""
    target = GREEN_LOG_SLOPE * math.log(float(conformal_radius(d, x))) + GREEN_DIAGONAL_OFFSET
    rows = []
    for N in N_list:
        ld = discretize(d, N, x)
        s = ld.site_of_point(x)
        gd = discrete_green_row(ld, s, method=method).at(s)
        rows.append(GreenAsymptoticRow(N, s, gd, gd - GREEN_LOG_SLOPE * math.log(N), target))
    return rows


@dataclass
class LatticePsi:
    """Solver-backed first-moment factors for a lattice domain with start and exit sites.

    The continuum Green function is read off as ``G_N / g``, the conformal
    radius from the diagonal asymptotic and the Poisson-kernel ratio from
    discrete harmonic measure.
    """

    domain: LatticeDomain
    start: tuple
    exit: tuple
    _green: np.ndarray = field(init=False, repr=False)
    _harm: np.ndarray = field(init=False, repr=False)
    _diag: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.start = tuple(map(int, self.start))
        self.exit = tuple(map(int, self.exit))
        ld = self.domain
        if not ld.is_interior(self.start):
            raise ValueError(f"start {self.start} is not interior to the piece")
        self._green = discrete_green_row(ld, self.start).to_grid()
        self._harm = harmonic_field(ld, self.exit).to_grid()
        if self._harm[self._local(self.start)] <= 0.0:
            raise ValueError("exit site unreachable from start")

    def _local(self, site):
        return site[0] - self.domain.origin[0], site[1] - self.domain.origin[1]

    def site(self, x):
        return self.domain.site_of_point(x)

    def contains(self, x) -> bool:
        return self.domain.is_interior(self.site(x))

    def prefetch(self, sites):
        """Compute diagonal Green values for many sites in one batch."""
        todo = [tuple(map(int, s)) for s in sites if tuple(map(int, s)) not in self._diag]
        todo = [s for s in todo if self.domain.is_interior(s)]
        if todo:
            for s, v in zip(todo, green_diagonal(self.domain, todo)):
                self._diag[s] = float(v)

    def factors(self, x) -> tuple[float, float]:
        s = self.site(x)
        if s not in self._diag:
            self.prefetch([s])
        N = self.domain.N
        log_cr = (self._diag[s] - GREEN_LOG_SLOPE * math.log(N) - GREEN_DIAGONAL_OFFSET) / GREEN_LOG_SLOPE
        loc = self._local(s)
        kernel = (self._green[loc] / GREEN_LOG_SLOPE) * self._harm[loc] / self._harm[self._local(self.start)]
        return math.exp(log_cr), float(kernel)
