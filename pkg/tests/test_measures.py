import csv
import json
import math

import numpy as np
import pytest
from scipy import integrate

from thickpoints.constants import atom_weight, chaos_prefactor, thick_threshold
from thickpoints.continuum import UNIT_DISC, TripleDXZ, psi_density
from thickpoints.lattice import strip_subdomain
from thickpoints.measures import (box_region, conditioned_first_moment_target, disc_region,
                                  exact_discrete_first_moment, integrate_over_disc, keys_to_sites,
                                  markov_decompose, restrict, site_keys, thick_point_count,
                                  thick_point_measure, thickness_split,
                                  unconditioned_first_moment_target)
from thickpoints.walk import WalkSample, make_rng, sample_walk


def synthetic(ld, sites, times):
    sites = np.array(sites, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((sites[:, 1], sites[:, 0]))
    return WalkSample(ld, (0, 0), tuple(ld.boundary_sites[0]), sites[order],
                      np.ones(len(sites), dtype=np.int64), np.asarray(times, float)[order])


def test_site_keys_round_trip():
    s = np.array([[-5, 7], [0, 0], [1000, -1000]])
    assert np.array_equal(keys_to_sites(site_keys(s)), s)
    assert np.all(np.diff(site_keys(s[np.lexsort((s[:, 1], s[:, 0]))])) > 0)


def test_single_measure_definition(disc32):
    ws = sample_walk(disc32, (0, 0), make_rng(1, 0))
    a = 0.3
    m = thick_point_measure([ws], a)
    thr = thick_threshold(32, a)
    assert {tuple(s) for s in m.sites} == {tuple(s) for s, t in zip(ws.sites, ws.local_times) if t >= thr}
    assert m.weight == atom_weight(32, a)
    assert m.total_mass == m.count * m.weight
    assert m.count == thick_point_count(ws, a)
    assert len({tuple(s) for s in m.sites}) == m.count
    assert all(disc32.is_interior(s) for s in m.sites)
    assert m.mode == "single"


def test_threshold_above_total_time(disc16):
    ws = synthetic(disc16, [(0, 0), (1, 0)], [0.5, 0.2])
    assert thick_point_measure([ws], 1.9).count == 0
    assert thick_point_count(ws, 1.9) == 0


def test_monotone_in_a(disc32):
    ws = sample_walk(disc32, (0, 0), make_rng(2, 0))
    prev = None
    for a in (0.1, 0.2, 0.4, 0.8):
        cur = {tuple(s) for s in thick_point_measure([ws], a).sites}
        if prev is not None:
            assert cur <= prev
        prev = cur


def test_multipoint_positivity_and_sum(disc16):
    thr = thick_threshold(16, 0.5)
    w1 = synthetic(disc16, [(0, 0), (1, 0), (2, 0)], [thr, thr / 2, 0.1])
    w2 = synthetic(disc16, [(1, 0), (2, 0), (3, 0)], [thr / 2, 0.1, thr * 3])
    m = thick_point_measure([w1, w2], 0.5)
    # (0,0) and (3,0) are thick for one walk only; (1,0) is jointly thick.
    assert {tuple(s) for s in m.sites} == {(1, 0)}
    assert m.mode == "multipoint"
    disjoint = synthetic(disc16, [(5, 5)], [10 * thr])
    assert thick_point_measure([w1, disjoint], 0.5).count == 0
    assert thick_point_measure([w1, w2], 0.5, I=[1]).count == 1
    with pytest.raises(ValueError):
        thick_point_measure([w1, w2], 0.5, I=[])


def test_restrict_and_regions(disc32):
    ws = sample_walk(disc32, (0, 0), make_rng(3, 0))
    m = thick_point_measure([ws], 0.2)
    assert restrict(m, lambda p: np.ones(len(p), bool)).count == m.count
    assert restrict(m, lambda p: np.zeros(len(p), bool)).count == 0
    left = restrict(m, box_region(-2, -2, 0, 2))
    right = restrict(m, box_region(0, -2, 2, 2))
    assert left.total_mass + right.total_mass == pytest.approx(m.total_mass)
    inner = m.mass(disc_region(0j, 0.3))
    assert inner <= m.total_mass


def test_measure_export(tmp_path, disc32):
    ws = sample_walk(disc32, (0, 0), make_rng(4, 0))
    m = thick_point_measure([ws], 0.2)
    m.write(tmp_path / "m.csv", tmp_path / "m.json", seed=4)
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["x", "y", "weight"] and len(rows) == m.count + 1
    assert float(rows[1][2]) == m.weight
    head = json.loads((tmp_path / "m.json").read_text())
    assert head == {"N": 32, "a": 0.2, "mode": "single", "seed": 4,
                    "total_mass": pytest.approx(m.total_mass, rel=1e-15)}


def test_markov_decompose(disc32):
    sub = strip_subdomain(disc32, 0.0, 0.25, (0, 0))
    for i in range(50):
        ws = sample_walk(disc32, (0, 0), make_rng(7, i), store_path=True)
        md = markov_decompose(ws, sub, 0.3)
        assert md.exact
        full = {tuple(s) for s in thick_point_measure([ws], 0.3).sites}
        parts = [{tuple(s) for s in p.sites} for p in (md.first, md.second, md.cross)]
        assert parts[0] | parts[1] | parts[2] == full
        assert sum(len(p) for p in parts) == len(full)
        r = thickness_split(ws, sub, 0.3)
        assert len(r) == md.cross.count
        assert np.all((r > 0) & (r < 1))


def test_markov_full_domain(disc32):
    ws = sample_walk(disc32, (0, 0), make_rng(7, 0), store_path=True)
    md = markov_decompose(ws, disc32, 0.3)
    assert md.exact and md.second.count == 0 and md.cross.count == 0
    assert thickness_split(ws, disc32, 0.3).size == 0


def test_integrate_over_disc():
    assert integrate_over_disc(lambda x: 1.0, 0.2j, 0.5) == pytest.approx(math.pi * 0.25, rel=1e-8)
    assert integrate_over_disc(lambda x: 1.0, 0j, 0.5, singular_at=0.1 + 0.1j) == pytest.approx(
        math.pi * 0.25, rel=1e-8)


def test_unconditioned_target_closed_forms():
    # a -> 0: integral of log(1/|x|) over the disc of radius 1/2.
    val = unconditioned_first_moment_target(UNIT_DISC, 0j, 0.0, 0j, 0.5)
    assert val == pytest.approx(2 * math.pi * (0.125 * math.log(2) + 0.0625), rel=1e-8)
    a = 0.5
    radial, _ = integrate.quad(lambda r: (1 - r * r) ** a * math.log(1 / r) * r, 0, 0.5)
    assert unconditioned_first_moment_target(UNIT_DISC, 0j, a, 0j, 0.5) == pytest.approx(
        chaos_prefactor(a) * 2 * math.pi * radial, rel=1e-8)
    assert unconditioned_first_moment_target(UNIT_DISC, 0j, a, 3 + 0j, 0.5) == 0.0


def test_conditioned_target_against_cartesian_quadrature():
    t = TripleDXZ(UNIT_DISC, 0j, 1j)
    a, c, r = 0.5, 0.3 + 0.1j, 0.2
    val, _ = integrate.dblquad(
        lambda y, x: psi_density(t, a, complex(x, y)), c.real - r, c.real + r,
        lambda x: c.imag - math.sqrt(max(r * r - (x - c.real) ** 2, 0)),
        lambda x: c.imag + math.sqrt(max(r * r - (x - c.real) ** 2, 0)), epsabs=1e-10)
    assert conditioned_first_moment_target(t, a, c, r) == pytest.approx(chaos_prefactor(a) * val,
                                                                         rel=1e-6)


def test_exact_discrete_first_moment_matches_simulation(disc16):
    a = 0.3
    region = disc_region(0j, 0.5)
    exact = exact_discrete_first_moment(disc16, (0, 0), a, region)
    vals = [thick_point_measure([sample_walk(disc16, (0, 0), make_rng(12, i))], a).mass(region)
            for i in range(6000)]
    assert abs(np.mean(vals) - exact) <= 3 * np.std(vals) / math.sqrt(len(vals))
    assert exact_discrete_first_moment(disc16, (0, 0), a, disc_region(5 + 0j, 0.1)) == 0.0
