import math

import numpy as np
import pytest

from nevlab.aux_charts import PreconditionError
from nevlab.strip_dynamics import (
    LEFTOVER_CONSTANT,
    StripLattice,
    StripState,
    TowerInterval,
    empirical_N0,
    points_in_polygon,
    pullback_quads,
    verify_angle_lemma,
    verify_expansion,
    verify_strip_mapping,
    verify_vertical_monotone,
)
from nevlab.tower_arith import Ordering


def test_strip_geometry(flag_lattice):
    lo0, hi0 = flag_lattice.hor_bounds_float(0)
    # alpha_0 + 2 alpha_{-1} with alpha_{-1} = log(alpha_0)/N
    assert lo0 == pytest.approx(3 + math.log(3), rel=1e-12)
    assert hi0 == pytest.approx(math.exp(6) - 6, rel=1e-12)
    lo1, _ = flag_lattice.hor_bounds_float(1)
    assert lo1 == pytest.approx(math.exp(6) + 6, rel=1e-12)
    assert flag_lattice.square_rows(0).start == 2
    assert flag_lattice.square_rows(1).start == 131
    x0, x1, y0, y1 = flag_lattice.square(0, 5, 2)
    assert x1 - x0 == pytest.approx(math.pi) and y1 - y0 == pytest.approx(math.pi)


def test_rectangles_are_disjoint_and_fill_most_of_a_square(flag_lattice, airy_lattice):
    for lat in (flag_lattice, airy_lattice):
        for k in (0, 1):
            for i in range(lat.N):
                xs = sorted(lat.rect_x(i, j, k) for j in range(lat.N))
                for (a0, a1), (b0, b1) in zip(xs, xs[1:]):
                    assert a1 < b0
                width = sum(b - a for a, b in xs)
                gap = 1 - width / math.pi
                assert gap <= 6 / lat.alpha.float_value(k) + 1e-12


def test_locate(flag_lattice):
    assert flag_lattice.strip_of(500.0).kind == "strip" and flag_lattice.strip_of(500.0).k == 1
    loc = flag_lattice.strip_of(405.0)
    assert loc.kind == "gap" and loc.k == 0
    edge = flag_lattice.hor_bounds_float(1)[0]
    assert flag_lattice.strip_of(TowerInterval.between(edge - 1, edge + 1)).kind == "boundary-uncertain"
    assert flag_lattice.strip_of(2.0).kind == "below"
    st = StripState(0, 10.0, 0.5 * sum(flag_lattice.rect_x(0, 1, 0)))
    loc = flag_lattice.locate(st)
    assert loc.k == 0 and loc.rect == 1


def test_psi_machine_regime_matches_direct(flag_lattice):
    for i in range(2):
        for j in range(2):
            xs = np.linspace(*flag_lattice.rect_x(i, j, 0), 5)
            Z = xs + 8j
            model = np.exp(flag_lattice.log_psi(i, j, Z))
            direct = np.array([flag_lattice.psi_direct(i, j, z) for z in Z])
            assert np.max(np.abs(model - direct) / np.abs(direct)) < 1e-5


def test_functional_equation_on_many_points(flag_lattice):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        i, j = (int(v) for v in rng.integers(0, 2, 2))
        Z = complex(rng.uniform(*flag_lattice.rect_x(i, j, 0)), rng.uniform(3.01, 12.0))
        a = complex(np.exp(flag_lattice.log_psi(i, j, np.array([Z]))[0]))
        b = flag_lattice.psi_direct(i, j, Z)
        worst = max(worst, abs(a - b) / abs(b))
    assert worst < 1e-5


def test_psi_tower_regime_log_chain(flag_lattice):
    a = flag_lattice.alpha
    y = a.float_value(1) + 3 * 3.0
    x = 0.5 * sum(flag_lattice.rect_x(0, 0, 1))
    new, regime = flag_lattice.psi(0, 0, StripState(0, y, x))
    assert regime in ("log", "machine")
    L = complex(flag_lattice.log_psi(0, 0, np.array([complex(x, y)]))[0])
    # log Im Z' = (N/2)(2y + log m) + log K + log sin(arg)
    oracle = 2 * y + math.log(0.5) + math.log(math.sin(L.imag))
    yi = new.y if isinstance(new.y, TowerInterval) else TowerInterval.point(new.y)
    assert yi.lo.depth == 1
    assert yi.lo.mantissa - 1e-6 <= oracle <= yi.hi.mantissa + 1e-6
    assert flag_lattice.strip_of(new.y).k == 2
    # one more step runs purely in tower arithmetic
    x2 = 0.5 * sum(flag_lattice.rect_x(0, 1, 2))
    nxt, regime2 = flag_lattice.psi(0, 1, StripState(0, yi, x2))
    assert regime2 == "tower"
    assert nxt.y.cmp(a[3]) is Ordering.GREATER


def test_psi_precondition(flag_lattice):
    with pytest.raises(PreconditionError):
        flag_lattice.psi(0, 0, StripState(0, 2.5, 0.1))


def test_angle_bounds_in_rectangles(flag_lattice, airy_lattice):
    rep = verify_angle_lemma(flag_lattice, 0, count=200)
    assert rep.ok and rep.min_scaled_margin >= 2
    # rectangle centre
    x = 0.5 * sum(flag_lattice.rect_x(0, 0, 0))
    L = complex(flag_lattice.log_psi(0, 0, np.array([x + 6j]))[0])
    assert min(L.imag, math.pi - L.imag) >= 2 / 3
    # the excluded mid-line maps next to the critical ray
    xm = flag_lattice.anchor(0, 0)
    Lm = complex(flag_lattice.log_psi(0, 0, np.array([xm + 6j]))[0])
    assert min(abs(Lm.imag), abs(math.pi - abs(Lm.imag))) < 2 / 3
    j, _ = flag_lattice.rect_label(0, xm, 0)
    assert int(j) == -1
    n0, reps = empirical_N0(flag_lattice, k_max=3, count=100)
    assert n0 == 0 and all(r.ok for r in reps)
    n0a, _ = empirical_N0(airy_lattice, k_max=3, count=50)
    assert n0a == 0


def test_small_alpha0_failure_is_recorded(flag_system):
    # at alpha_0 = 1.5 the rectangles of Hor_0 are empty, so the first level fails
    lat = StripLattice(flag_system, 1.5)
    n0, reps = empirical_N0(lat, k_max=2, count=50)
    assert n0 == 1 and not reps[0].ok and reps[1].ok


@pytest.mark.parametrize("k", [0, 1])
def test_strip_mapping_machine(flag_lattice, k):
    rep = verify_strip_mapping(flag_lattice, k, count=80)
    assert rep.mode == "machine" and rep.ok and rep.contained == rep.samples


@pytest.mark.parametrize("k", [2, 3, 4, 5])
def test_strip_mapping_tower(flag_lattice, k):
    rep = verify_strip_mapping(flag_lattice, k)
    assert rep.mode == "tower" and rep.certificate.ok


def test_airy_strip_certificate_needs_larger_k(airy_lattice):
    assert not airy_lattice.strip_certificate(0).ok
    assert airy_lattice.strip_certificate(1).ok


def test_expansion(flag_lattice):
    assert flag_lattice.alpha.float_value(1) / (4 * math.pi) == pytest.approx(32.1, abs=0.05)
    rep = verify_expansion(flag_lattice, 1, count=1000)
    assert rep.ok and rep.samples > 0 and rep.richardson_gap < 1e-6
    with pytest.raises(PreconditionError):
        verify_expansion(flag_lattice, 0)


@pytest.mark.parametrize("k", [0, 1])
def test_vertical_monotone(flag_lattice, k):
    rep = verify_vertical_monotone(flag_lattice, k, count=200)
    assert rep.ok and rep.pairs == 200


def test_pullback_leftover_level_one(flag_lattice):
    m = flag_lattice.square_rows(1).start
    r = pullback_quads(flag_lattice, 0, m, 0, resolution=512)
    assert r.k == 1
    assert r.bound == pytest.approx(LEFTOVER_CONSTANT / math.exp(6))
    assert r.bound == pytest.approx(0.153, abs=5e-4)
    assert r.leftover <= r.bound


def test_pullback_exact_polygons(flag_lattice):
    r = pullback_quads(flag_lattice, 0, 2, 0, mode="exact", resolution=96)
    for j, squares in r.image_squares.items():
        assert squares
        poly = r.polygons[j]
        x_left = flag_lattice.anchor(j, 2)
        for m, n in squares:
            corners = np.array([x_left + n * math.pi + m * math.pi * 1j + d
                                for d in (0, math.pi, math.pi + math.pi * 1j, math.pi * 1j)])
            assert np.all(points_in_polygon(poly, corners))
        # no lattice square fits in the unused boundary band
        assert r.gap_check[j] <= math.sqrt(2) * math.pi
