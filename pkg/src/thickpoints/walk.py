"""Continuous-time simple random walk on lattice domains, stopped at the boundary.

The jump chain is simulated in compiled kernels that consume pre-drawn random
bytes (two bits per step), so a walk is a pure function of its RNG stream.
Holding times are then attached either as one ``Gamma(visits, 1)`` draw per
site (default) or, when the path is stored, as one ``Exp(1)`` draw per step.
Stored holding times are rounded up to multiples of ``2**-40`` so that local
times of sub-paths add up exactly.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .lattice import INTERIOR, LatticeDomain
from .solver import PotentialField

logger = logging.getLogger(__name__)

MAX_STEPS = 10**9
_HOLD_QUANTUM_EXP = 40
_FIRST_CHUNK = 1 << 14
_MAX_CHUNK = 1 << 22


class RunawayWalkError(RuntimeError):
    pass


class UnreachableTargetError(ValueError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for replication ``stream`` of master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def quantize_holding(e: np.ndarray) -> np.ndarray:
    return np.ldexp(np.ceil(np.ldexp(e, _HOLD_QUANTUM_EXP)), -_HOLD_QUANTUM_EXP)


@numba.njit(cache=True, nogil=True)
def _plain_kernel(mask, pos, bits, nsteps, off, visits, touched, n_touched, path, store):
    # mask, visits are flattened grids; off maps a 2-bit direction to a flat offset.
    for i in range(nsteps):
        if mask[pos] != 1:
            return pos, i, n_touched, True
        v = visits[pos]
        if v == 0:
            touched[n_touched] = pos
            n_touched += 1
        visits[pos] = v + 1
        if store:
            path[i] = pos
        pos += off[(bits[i >> 2] >> (2 * (i & 3))) & 3]
    return pos, nsteps, n_touched, mask[pos] != 1


@numba.njit(cache=True, nogil=True)
def _biased_kernel(mask, cum, pos, u, off, visits, touched, n_touched, path, store):
    for i in range(u.shape[0]):
        if mask[pos] != 1:
            return pos, i, n_touched, True
        v = visits[pos]
        if v == 0:
            touched[n_touched] = pos
            n_touched += 1
        visits[pos] = v + 1
        if store:
            path[i] = pos
        r = u[i]
        if r < cum[pos, 0]:
            pos += off[0]
        elif r < cum[pos, 1]:
            pos += off[1]
        elif r < cum[pos, 2]:
            pos += off[2]
        else:
            pos += off[3]
    return pos, u.shape[0], n_touched, mask[pos] != 1


@numba.njit(cache=True, nogil=True)
def _excursion_kernel(mask, contour, pos, bits, nsteps, off, center, is_open, counts, n_exc):
    # counts[k] = number of visits to center during excursion k; n_exc = -1 on overflow.
    for i in range(nsteps):
        if mask[pos] != 1:
            if contour[pos]:
                is_open = False
            return pos, i, is_open, n_exc, True
        if pos == center:
            if not is_open:
                is_open = True
                n_exc += 1
                if n_exc > counts.shape[0]:
                    return pos, i, is_open, -1, False
                counts[n_exc - 1] = 0
            counts[n_exc - 1] += 1
        elif is_open and contour[pos]:
            is_open = False
        pos += off[(bits[i >> 2] >> (2 * (i & 3))) & 3]
    return pos, nsteps, is_open, n_exc, mask[pos] != 1


def contour_mask(ld: LatticeDomain, x, R: int) -> np.ndarray:
    """Flattened indicator of the sites at sup-distance exactly ``R`` from ``x``."""
    i = np.arange(ld.mask.shape[0])[:, None] + ld.origin[0] - x[0]
    j = np.arange(ld.mask.shape[1])[None, :] + ld.origin[1] - x[1]
    return (np.maximum(np.abs(i), np.abs(j)) == R).ravel()


def _offsets(ld):
    w = ld.mask.shape[1]
    return np.array([w, -w, 1, -1], dtype=np.int64)


class _Workspace:
    """Per-thread scratch arrays for one domain."""

    def __init__(self, ld: LatticeDomain):
        self.mask = ld.mask.ravel()
        self.visits = np.zeros(ld.mask.size, dtype=np.int32)
        self.touched = np.zeros(ld.n_interior + 1, dtype=np.int64)
        self.off = _offsets(ld)


_WS = threading.local()


def _workspace(ld):
    cache = getattr(_WS, "cache", None)
    key = (ld.key, ld.origin, ld.mask.shape)
    if cache is None or cache[0] != key:
        _WS.cache = (key, _Workspace(ld))
    return _WS.cache[1]


@dataclass
class WalkSample:
    """One trajectory from ``start`` to ``exit_site``.

    ``sites`` lists the distinct interior sites visited (lexicographic order)
    with matching ``visit_counts`` and ``local_times``. ``path`` is the full
    site sequence ending at the exit site and ``holding[i]`` the time spent at
    ``path[i]``; both are ``None`` unless the path was stored.
    """

    domain: LatticeDomain
    start: tuple
    exit_site: tuple
    sites: np.ndarray
    visit_counts: np.ndarray
    local_times: np.ndarray
    path: np.ndarray | None = None
    holding: np.ndarray | None = None
    stream: tuple = ()
    _lookup: dict | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return int(self.visit_counts.sum())

    def _index(self):
        if self._lookup is None:
            self._lookup = {(int(x), int(y)): i for i, (x, y) in enumerate(self.sites)}
        return self._lookup

    def local_time(self, site) -> float:
        i = self._index().get((int(site[0]), int(site[1])))
        return 0.0 if i is None else float(self.local_times[i])

    def visits(self, site) -> int:
        i = self._index().get((int(site[0]), int(site[1])))
        return 0 if i is None else int(self.visit_counts[i])

    def total_time(self) -> float:
        return float(self.local_times.sum())


def _run(ld: LatticeDomain, start, rng, store_path, cum=None):
    ox, oy = ld.origin
    width = ld.mask.shape[1]
    ws = _workspace(ld)
    if not ld.contains_site(start):
        raise ValueError(f"start {tuple(start)} is outside the domain")
    pos = (start[0] - ox) * width + (start[1] - oy)
    n_touched = 0
    chunk = _FIRST_CHUNK
    total = 0
    pieces = []
    done = False
    while not done:
        path = np.empty(chunk if store_path else 0, dtype=np.int64)
        if cum is None:
            bits = np.frombuffer(rng.bytes(chunk // 4), dtype=np.uint8)
            pos, used, n_touched, done = _plain_kernel(
                ws.mask, pos, bits, chunk, ws.off, ws.visits, ws.touched, n_touched, path, store_path)
        else:
            u = rng.random(chunk)
            pos, used, n_touched, done = _biased_kernel(
                ws.mask, cum, pos, u, ws.off, ws.visits, ws.touched, n_touched, path, store_path)
        total += used
        if store_path:
            pieces.append(path[:used])
        if total > MAX_STEPS:
            ws.visits[ws.touched[:n_touched]] = 0
            raise RunawayWalkError(f"walk exceeded {MAX_STEPS} steps; domain is probably broken")
        chunk = min(chunk * 2, _MAX_CHUNK)

    flat = np.sort(ws.touched[:n_touched])
    counts = ws.visits[flat].astype(np.int64)
    ws.visits[flat] = 0
    origin = np.array([ox, oy])
    sites = np.column_stack([flat // width, flat % width]) + origin
    exit_site = (int(pos // width + ox), int(pos % width + oy))

    path = holding = None
    if store_path:
        fp = np.concatenate(pieces + [np.array([pos], dtype=np.int64)])
        path = np.column_stack([fp // width, fp % width]) + origin
        holding = quantize_holding(rng.standard_exponential(len(path) - 1))
        local = _sum_by_site(ld, path[:-1], holding, sites)
    else:
        local = rng.gamma(counts.astype(float)) if len(counts) else np.zeros(0)
    return sites, counts, local, exit_site, path, holding


def _sum_by_site(ld, path_sites, holding, sites):
    # Local times of ``sites`` (sorted) from a path segment and its holding times.
    if len(sites) == 0:
        return np.zeros(0)
    width = ld.mask.shape[1]
    key = (path_sites[:, 0] - ld.origin[0]) * width + (path_sites[:, 1] - ld.origin[1])
    skey = (sites[:, 0] - ld.origin[0]) * width + (sites[:, 1] - ld.origin[1])
    lookup = np.empty(ld.mask.size, dtype=np.int64)
    lookup[skey] = np.arange(len(skey))
    return np.bincount(lookup[key], weights=holding, minlength=len(sites))


def sample_walk(ld: LatticeDomain, start, rng: np.random.Generator, store_path: bool = False,
                stream=()) -> WalkSample:
    """Simulate the walk from ``start`` until it first hits the boundary."""
    start = (int(start[0]), int(start[1]))
    sites, counts, local, exit_site, path, holding = _run(ld, start, rng, store_path)
    return WalkSample(ld, start, exit_site, sites, counts, local, path, holding, tuple(stream))


def transition_table(h_field: PotentialField, exit_target) -> np.ndarray:
    """Cumulative Doob-transformed step probabilities, one row of four per flattened grid site."""
    ld = h_field.domain
    h = h_field.to_grid()
    tx, ty = exit_target[0] - ld.origin[0], exit_target[1] - ld.origin[1]
    h[tx, ty] = 1.0
    nb = np.stack([np.roll(h, -1, 0), np.roll(h, 1, 0), np.roll(h, -1, 1), np.roll(h, 1, 1)], axis=-1)
    tot = nb.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tot > 0, nb / tot, 0.0)
    cum = np.cumsum(p, axis=-1)
    cum[..., 3] = np.inf
    cum[ld.mask != INTERIOR] = np.inf
    return np.ascontiguousarray(cum.reshape(-1, 4))


def sample_conditioned_walk(ld: LatticeDomain, start, exit_target, h_field: PotentialField,
                            rng: np.random.Generator, store_path: bool = False, stream=(),
                            table: np.ndarray | None = None) -> WalkSample:
    """Walk conditioned to leave through ``exit_target`` (Doob transform by ``h_field``).

    ``h_field`` must be :func:`~thickpoints.solver.harmonic_field` of the target.
    Passing a precomputed ``table`` from :func:`transition_table` skips rebuilding it.
    """
    start = (int(start[0]), int(start[1]))
    exit_target = (int(exit_target[0]), int(exit_target[1]))
    if h_field.source != ("harmonic", exit_target):
        raise ValueError("h_field does not belong to this exit target")
    if h_field.at(start) <= 0.0:
        raise UnreachableTargetError(f"exit target {exit_target} unreachable from {start}")
    cum = transition_table(h_field, exit_target) if table is None else table
    sites, counts, local, exit_site, path, holding = _run(ld, start, rng, store_path, cum=cum)
    return WalkSample(ld, start, exit_site, sites, counts, local, path, holding, tuple(stream))


@dataclass
class ExcursionStats:
    center: tuple
    R: int
    count: int
    local_times: np.ndarray
    q_R: float


def _require_path(ws: WalkSample):
    if ws.path is None:
        raise ValueError("operation needs a stored path; sample with store_path=True")


def ratio_q(N: int, R: float) -> float:
    return math.log(N / R) / math.log(N)


def count_excursions(ws: WalkSample, x, R: int, count_truncated: bool = True) -> ExcursionStats:
    """Excursions from ``x`` to the square contour at sup-distance ``R`` before exit.

    An excursion opens at a visit to ``x`` and closes at the next hit of the
    contour. One still open when the walk exits counts iff ``count_truncated``.
    """
    _require_path(ws)
    x = (int(x[0]), int(x[1]))
    path = ws.path
    at_x = (path[:, 0] == x[0]) & (path[:, 1] == x[1])
    on_c = np.maximum(np.abs(path[:, 0] - x[0]), np.abs(path[:, 1] - x[1])) == R
    events = np.flatnonzero(at_x | on_c)
    hold = np.append(ws.holding, 0.0)
    times = []
    is_open = False
    for t in events:
        if at_x[t]:
            if not is_open:
                is_open = True
                times.append(0.0)
            times[-1] += hold[t]
        elif is_open:
            is_open = False
    if is_open and not count_truncated:
        times.pop()
    return ExcursionStats(x, R, len(times), np.array(times), ratio_q(ws.domain.N, R))


def excursion_visit_counts(ld: LatticeDomain, start, x, R: int, rng: np.random.Generator,
                           count_truncated: bool = True, contour: np.ndarray | None = None):
    """Pathless excursion count: visits to ``x`` in each excursion to the contour of radius ``R``.

    Consumes the RNG exactly like :func:`sample_walk` without a stored path, so
    the counts agree with :func:`count_excursions` on the same stream. Returns
    the per-excursion visit counts, the exit site and whether an excursion was
    still open when the walk exited.
    """
    ox, oy = ld.origin
    width = ld.mask.shape[1]
    ws = _workspace(ld)
    pos = (start[0] - ox) * width + (start[1] - oy)
    center = (x[0] - ox) * width + (x[1] - oy)
    if contour is None:
        contour = contour_mask(ld, x, R)
    counts = np.zeros(64, dtype=np.int64)
    n_exc, is_open, done = 0, False, False
    chunk, total = _FIRST_CHUNK, 0
    while not done:
        bits = np.frombuffer(rng.bytes(chunk // 4), dtype=np.uint8)
        while True:
            saved = counts.copy()
            pos2, used, open2, n2, done = _excursion_kernel(
                ws.mask, contour, pos, bits, chunk, ws.off, center, is_open, counts, n_exc)
            if n2 >= 0:
                break
            counts = np.concatenate([saved, np.zeros_like(saved)])
        pos, is_open, n_exc = pos2, open2, n2
        total += used
        if total > MAX_STEPS:
            raise RunawayWalkError(f"walk exceeded {MAX_STEPS} steps")
        chunk = min(chunk * 2, _MAX_CHUNK)
    out = counts[:n_exc].copy()
    if is_open and not count_truncated and n_exc:
        out = out[:-1]
    return out, (int(pos // width + ox), int(pos % width + oy)), bool(is_open)


def good_event(ws: WalkSample, x, a: float, b: float, eps: float, N: int | None = None,
               count_truncated: bool = True) -> bool:
    """Whether excursion counts around ``x`` stay below the cap at every dyadic scale."""
    if not b > a:
        raise ValueError("need b > a")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    N = ws.domain.N if N is None else N
    radii = good_event_radii(N, a, eps)
    if not radii:
        logger.info("good event at %s: empty radius range for N=%d, vacuously true", x, N)
        return True
    for R in radii:
        if count_excursions(ws, x, R, count_truncated).count > good_event_cap(N, R, b):
            return False
    return True


def good_event_radii(N: int, a: float, eps: float) -> list[int]:
    lo, hi = N ** (0.5 - a / 4.0), eps * N
    out, R = [], 2
    while R <= hi:
        if R >= lo:
            out.append(R)
        R *= 2
    return out


def good_event_cap(N: int, R: int, b: float) -> float:
    q = ratio_q(N, R)
    return (b / 2.0) * ((1.0 + q) / (1.0 - q)) * math.log(N / R)


def _piece(ws: WalkSample, domain, lo, hi, start, end):
    path = ws.path[lo:hi + 1]
    holding = ws.holding[lo:hi]
    if hi > lo:
        # Flat keys in the parent grid keep the lexicographic site order.
        width = ws.domain.mask.shape[1]
        org = np.array(ws.domain.origin)
        key = (path[:-1, 0] - org[0]) * width + (path[:-1, 1] - org[1])
        uniq, inv = np.unique(key, return_inverse=True)
        sites = np.column_stack([uniq // width, uniq % width]) + org
        counts = np.bincount(inv, minlength=len(uniq)).astype(np.int64)
        local = np.bincount(inv, weights=holding, minlength=len(uniq))
    else:
        sites = np.zeros((0, 2), dtype=np.int64)
        counts = np.zeros(0, dtype=np.int64)
        local = np.zeros(0)
    return WalkSample(domain, start, end, sites, counts, local, path, holding, ws.stream)


def first_exit_index(ws: WalkSample, sub: LatticeDomain, begin: int = 0) -> int:
    """Index of the first path position at or after ``begin`` outside the interior of ``sub``."""
    _require_path(ws)
    p = ws.path[begin:]
    i = p[:, 0] - sub.origin[0]
    j = p[:, 1] - sub.origin[1]
    inside = (i >= 0) & (i < sub.mask.shape[0]) & (j >= 0) & (j < sub.mask.shape[1])
    interior = np.zeros(len(p), dtype=bool)
    interior[inside] = sub.mask[i[inside], j[inside]] == INTERIOR
    out = np.flatnonzero(~interior)
    return begin + int(out[0])


def split_at_first_exit(ws: WalkSample, sub: LatticeDomain):
    """Cut the trajectory when it first leaves the interior of ``sub``.

    Returns the two pieces and the cut site ``Y``. The first piece lives in
    ``sub``; the second restarts at ``Y`` in the original domain. Local times of
    the two pieces add up exactly to those of ``ws``.
    """
    _require_path(ws)
    if not sub.is_interior(ws.start) and not sub.is_boundary(ws.start):
        raise ValueError(f"start {ws.start} is not inside the subdomain")
    t = first_exit_index(ws, sub)
    Y = (int(ws.path[t, 0]), int(ws.path[t, 1]))
    first = _piece(ws, sub, 0, t, ws.start, Y)
    second = _piece(ws, ws.domain, t, len(ws.path) - 1, Y, ws.exit_site)
    return first, second, Y


@dataclass
class StripPiece:
    domain: LatticeDomain
    start: tuple
    exit: tuple
    begin: int
    end: int


def strip_decompose(ws: WalkSample, p: int) -> list[StripPiece]:
    """Successive strip pieces of a stored path at horizontal scale ``2**-p``.

    The first strip is centred on the dyadic column of the start; every later
    strip is centred on the point where the walk left the previous one.
    """
    from .lattice import strip_subdomain

    _require_path(ws)
    ld = ws.domain
    w = 2.0 ** -p
    if w * ld.N < 2:
        raise ValueError(f"strip half-width 2^-{p} is below two lattice spacings at N={ld.N}")
    center = w * math.floor(ws.start[0] / ld.N / w)
    pieces = []
    begin = 0
    site = ws.start
    while True:
        sub = strip_subdomain(ld, center, w, site)
        end = first_exit_index(ws, sub, begin)
        nxt = (int(ws.path[end, 0]), int(ws.path[end, 1]))
        pieces.append(StripPiece(sub, site, nxt, begin, end))
        if end == len(ws.path) - 1:
            break
        begin, site = end, nxt
        center = site[0] / ld.N
    return pieces


def with_stream(ws: WalkSample, stream) -> WalkSample:
    return replace(ws, stream=tuple(stream))


# Binary path dump: magic, version, then unsigned LEB128 varints.
# Header: N, zigzag start x, zigzag start y, step count; then zigzag (dx, dy) per step.
PATH_DUMP_MAGIC = b"TPWK"
PATH_DUMP_VERSION = 1


def _zigzag(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return ((v << 1) ^ (v >> 63)).astype(np.uint64)


def _unzigzag(u: int) -> int:
    return (u >> 1) ^ -(u & 1)


def _varints(values) -> bytes:
    out = bytearray()
    for v in values:
        v = int(v)
        while v >= 0x80:
            out.append((v & 0x7F) | 0x80)
            v >>= 7
        out.append(v)
    return bytes(out)


def encode_path(ws: WalkSample) -> bytes:
    """Versioned varint-delta encoding of a stored path."""
    _require_path(ws)
    p = ws.path
    d = np.diff(p, axis=0)
    head = [ws.domain.N, *_zigzag(p[0]), len(d)]
    return PATH_DUMP_MAGIC + bytes([PATH_DUMP_VERSION]) + _varints(head) + _varints(_zigzag(d).ravel())


def decode_path(buf: bytes) -> tuple[int, np.ndarray]:
    """Inverse of :func:`encode_path`; returns ``(N, path)``."""
    if buf[:4] != PATH_DUMP_MAGIC:
        raise ValueError("not a path dump")
    if buf[4] != PATH_DUMP_VERSION:
        raise ValueError(f"unsupported path dump version {buf[4]}")
    vals, cur, shift = [], 0, 0
    for byte in buf[5:]:
        cur |= (byte & 0x7F) << shift
        if byte & 0x80:
            shift += 7
        else:
            vals.append(cur)
            cur, shift = 0, 0
    if shift:
        raise ValueError("truncated path dump")
    N, sx, sy, n = vals[:4]
    steps = np.array([_unzigzag(v) for v in vals[4:]], dtype=np.int64).reshape(-1, 2)
    if len(steps) != n:
        raise ValueError("path dump length mismatch")
    start = np.array([[_unzigzag(sx), _unzigzag(sy)]], dtype=np.int64)
    return N, np.concatenate([start, start + np.cumsum(steps, axis=0)])
