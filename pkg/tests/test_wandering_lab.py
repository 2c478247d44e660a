import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nevlab.strip_dynamics import StripLattice
from nevlab.wandering_lab import (
    NoAdmissiblePair,
    UsageError,
    admissible_pair_rows,
    build_tree,
    build_wandering_pair,
    itinerary_avoidance,
    mc_density,
    polygon_area,
    refine,
    trace_samples,
    wilson,
)


@pytest.fixture(scope="module")
def tree0(flag_lattice):
    t = build_tree(flag_lattice, 0, flag_lattice.square_rows(0).start, 0)
    return refine(t, 4, samples=5000, seed=1)


def test_polygon_area_and_wilson():
    sq = np.array([0, 2, 2 + 3j, 3j])
    assert polygon_area(sq) == pytest.approx(6.0)
    assert polygon_area(sq[::-1]) == pytest.approx(6.0)
    lo, hi = wilson(50, 100)
    assert lo < 0.5 < hi
    # closed-form Wilson interval at z = 1.959964
    z = 1.959963984540054
    p, n = 0.5, 100
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    assert lo == pytest.approx(centre - half, rel=1e-9) and hi == pytest.approx(centre + half, rel=1e-9)
    assert wilson(0, 0) == (0.0, 1.0)


def test_tree_structure_and_nesting(tree0, flag_lattice):
    assert tree0.k == 0 and tree0.root.area == pytest.approx(math.pi ** 2)
    level1 = tree0.level(1)
    assert len(level1) == 2 and all(v.area_kind == "polygon" for v in level1)
    # children are disjoint pieces of the root
    assert sum(v.area for v in level1) <= tree0.root.area
    assert 0 <= tree0.root.leftover <= 1
    for d in (2, 3, 4):
        for parent in tree0.level(d - 1):
            kids = tree0.children(parent.labels)
            assert len(kids) == 2
            for kid in kids:
                assert kid.planes[:-1] == parent.planes and kid.planes[-1] == kid.labels[-1]
                assert kid.image_strip == tree0.k + d
            if d >= 3:
                assert sum(k.area for k in kids) <= parent.area * (1 + 1e-12)
    # level-2 chains over N = 2 planes
    assert sorted(v.labels for v in tree0.level(2)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert {v.area_kind for v in tree0.level(3)} == {"modeled"}


def test_level_one_polygons_lie_in_root(tree0, flag_lattice):
    x0, x1, y0, y1 = flag_lattice.square(0, *tree0.square)
    for v in tree0.level(1):
        p = v.region
        assert np.all((p.real >= x0) & (p.real <= x1) & (p.imag >= y0) & (p.imag <= y1))
        xl, xr = flag_lattice.rect_x(0, v.labels[0], 0)
        assert np.all((p.real > xl) & (p.real < xr))


def test_survival_curve(tree0):
    c = mc_density(tree0, levels=4, samples=5000, seed=1)
    assert c.ok, c.checks
    assert all(b <= a for a, b in zip(c.survival, c.survival[1:]))
    assert c.kind == ["sampled", "sampled", "modeled", "modeled"]
    for row in c.rows():
        assert row["ci_lo"] <= row["survival"] <= row["ci_hi"] or row["kind"] == "modeled"
    # level 1 agrees with the certified polygon area
    assert abs(c.survival[0] - c.polygon_fraction) <= 3 * math.sqrt(0.25 / 5000) + 1e-4


def test_survival_is_reproducible(flag_lattice):
    m = flag_lattice.square_rows(0).start
    runs = [mc_density(build_tree(flag_lattice, 0, m, 0), levels=3, samples=3000, seed=7) for _ in range(2)]
    assert runs[0].survival == runs[1].survival and runs[0].ci == runs[1].ci
    other = mc_density(build_tree(flag_lattice, 0, m, 0), levels=3, samples=3000, seed=8)
    assert other.survival != runs[0].survival


def test_level_one_floor_in_tall_strip(flag_lattice):
    # in Hor_1 the leftover is at most (4 sqrt2 pi^2 + 6)/alpha_1 ~ 0.153
    t = build_tree(flag_lattice, 0, flag_lattice.square_rows(1).start, 0)
    c = mc_density(t, levels=3, samples=4000, seed=2)
    sigma = math.sqrt(c.survival[0] * (1 - c.survival[0]) / 4000)
    assert c.survival[0] >= 1 - 0.1533 - 3 * sigma
    assert c.ok


def test_trace_levels(flag_lattice):
    tr = trace_samples(flag_lattice, 0, 2, 0, count=1000, seed=3, levels=1)
    assert tr.labels.shape == (1000, 1) and tr.depth.max() <= 1
    assert set(np.unique(tr.labels)) <= {-1, 0, 1}
    with pytest.raises(UsageError):
        trace_samples(flag_lattice, 0, 2, 0, count=10, levels=3)


def test_wandering_pair(flag_lattice):
    rows = admissible_pair_rows(flag_lattice, 1)
    assert rows is not None
    p = build_wandering_pair(flag_lattice, k=1, samples=100)
    assert p.ok
    assert p.initial_gap >= 2 * 3.0
    assert p.strip_index == {l: 1 + l for l in range(1, 6)}
    assert all(g.ok for g in p.gaps)
    assert p.preimage_separation > 0


def test_no_admissible_pair_for_small_alpha0(flag_system):
    lat = StripLattice(flag_system, 1.2)
    with pytest.raises(NoAdmissiblePair) as ei:
        build_wandering_pair(lat, k=0)
    assert ei.value.k == 0


def test_avoidance_flagship(tree0):
    a = itinerary_avoidance(tree0, 1, levels=4, samples=5000, seed=1)
    assert a.ok and a.N == 2
    assert all(b < x for x, b in zip(a.fraction, a.fraction[1:]))
    assert a.rate == pytest.approx(0.5, abs=0.02)


def test_avoidance_three_planes(airy_lattice):
    t = build_tree(airy_lattice, 0, airy_lattice.square_rows(0).start, 0)
    refine(t, 1)
    a = itinerary_avoidance(t, 2, levels=4, samples=3000, seed=0)
    assert a.N == 3 and a.ok
    assert a.threshold == pytest.approx(a.D_fit * 2 / 3)


@settings(max_examples=10, deadline=None)
@given(st.one_of(st.integers(-3, 0), st.integers(3, 9)))
def test_avoidance_rejects_bad_plane(flag_lattice, q):
    t = build_tree(flag_lattice, 0, 2, 0)
    with pytest.raises(UsageError):
        itinerary_avoidance(t, q)
