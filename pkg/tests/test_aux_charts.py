import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nevlab.aux_charts import (
    AuxChart,
    PreconditionError,
    aux_inverse,
    aux_value,
    build_charts,
    critical_rays,
    overlap_consistency,
    overlap_samples,
)
from nevlab.function_core import SchwarzianPolynomial

ONE = SchwarzianPolynomial((1,))
MINUS_Z = SchwarzianPolynomial((0, -1))
Z_SQ = SchwarzianPolynomial((0, 0, 1))


@pytest.mark.parametrize("P, expected", [
    (ONE, [0, math.pi]),
    (MINUS_Z, [math.pi / 3, math.pi, 5 * math.pi / 3]),
    (Z_SQ, [0, math.pi / 2, math.pi, 3 * math.pi / 2]),
])
def test_critical_rays_closed_forms(P, expected):
    fr = critical_rays(P)
    assert np.allclose(fr.thetas, expected, atol=1e-12, rtol=0)
    for th in fr.thetas:
        # arg a + N theta = 0 mod 2 pi
        r = (np.angle(P.leading) + P.order * th) % (2 * math.pi)
        assert min(r, 2 * math.pi - r) < 1e-12
    assert fr.eps0 == pytest.approx(math.pi / (8 * P.order))


def test_constant_P_chart_is_translation():
    ch = build_charts(ONE)[0]
    R = ch.R
    assert ch.value(R + 5) == pytest.approx(5, abs=1e-12)
    assert ch.value(R + 3j) == pytest.approx(3j, abs=1e-12)
    assert ch.inverse(7) == pytest.approx(R + 7, abs=1e-12)


def test_cubic_order_chart_against_closed_form():
    fr = critical_rays(MINUS_Z, R=10.0)
    ch = AuxChart(MINUS_Z, fr, 0)
    z = 100 * np.exp(1j * math.pi / 3)
    with mpmath.workdps(30):
        oracle = mpmath.mpf(2) / 3 * (mpmath.mpf(100) ** 1.5 - mpmath.mpf(10) ** 1.5)
    assert abs(ch.value(z) - complex(oracle)) < 1e-8 * float(oracle)
    # off the ray: antiderivative (2/3)(-s)^{3/2} with the branch fixed at the base point
    w = 60 * np.exp(1j * (math.pi / 3 + 0.4))
    base = 10 * np.exp(1j * math.pi / 3)
    with mpmath.workdps(30):
        def F(s):
            # continuous branch of (-s)^{3/2} along the sector, matched so F' = sqrt(P) > 0 on the ray
            u = mpmath.mpc(s) * mpmath.expjpi(mpmath.mpf(-1) / 3)
            return mpmath.mpf(2) / 3 * u ** 1.5
        oracle2 = complex(F(w) - F(base))
    assert abs(ch.value(w) - oracle2) < 1e-8 * abs(oracle2)


def test_series_matches_quadrature_and_paths_agree():
    P = SchwarzianPolynomial((0.5 - 0.2j, 0.3j, 1.0))
    for ch in build_charts(P):
        z = 3 * ch.R * np.exp(1j * (ch.theta + 0.3))
        a = aux_value(ch, z)
        b = aux_value(ch, z, method="quadrature")
        c = ch.value_quadrature(z, path="arc-ray")
        assert abs(a - b) < 1e-9 * max(1, abs(a))
        assert abs(b - c) < 1e-9 * max(1, abs(b))


@pytest.mark.parametrize("P", [ONE, MINUS_Z, Z_SQ])
def test_ray_positivity(P):
    for ch in build_charts(P):
        r = ch.R * np.geomspace(1.001, 100, 20)
        Zv = ch.value(r * np.exp(1j * ch.theta))
        assert np.all(np.abs(Zv.imag) < 1e-8 * np.abs(Zv))
        assert np.all(Zv.real > 0)


def test_random_quadratic_ray_image_flattens():
    # lower-order terms of P tilt the ray image; the tilt dies off like 1/|z|
    rng = np.random.default_rng(5)
    P = SchwarzianPolynomial(tuple(rng.normal(size=3) + 1j * rng.normal(size=3)))
    for ch in build_charts(P):
        r = ch.R * np.geomspace(1.001, 100, 20)
        Zv = ch.value(r * np.exp(1j * ch.theta))
        tilt = np.abs(Zv.imag) / np.abs(Zv)
        assert np.all(np.diff(tilt) < 0)
        assert tilt[-1] * r[-1] < 2 * tilt[10] * r[10]


def test_inverse_for_imaginary_target():
    ch = build_charts(MINUS_Z)[0]
    z = aux_inverse(ch, 50j)
    assert abs(ch.value_quadrature(z) - 50j) < 1e-8 * 50


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([ONE, MINUS_Z, Z_SQ]), st.floats(1.05, 50), st.floats(-0.95, 0.95), st.integers(0, 3))
def test_round_trip(P, rfac, afrac, idx):
    ch = build_charts(P)[idx % P.order]
    z = ch.R * rfac * np.exp(1j * (ch.theta + afrac * ch.frame.half_opening))
    back = ch.inverse(ch.value(z))
    assert abs(back - z) < 1e-8 * max(1, abs(z))


@pytest.mark.parametrize("P", [ONE, MINUS_Z, Z_SQ])
def test_asymptotic_ratio(P):
    ch = build_charts(P)[0]
    rb = ch.big_radius()
    h = ch.frame.half_opening * 0.99
    z = rb * np.geomspace(1, 1e4, 10)[:, None] * np.exp(1j * (ch.theta + np.linspace(-h, h, 7)))[None, :]
    # the reported radius is where the worst deviation first reaches 1%
    assert np.max(np.abs(ch.asymptotic_ratio(z.ravel()) - 1)) <= 0.01 + 1e-12
    assert 0 < ch.aperture() < math.pi / 2


def test_overlap_constancy():
    c0, c1 = build_charts(ONE)
    z = overlap_samples(c0.frame, 0, 50, np.random.default_rng(0))
    rep = overlap_consistency(c0, c1, z)
    assert rep.residual < 1e-9 and rep.im_positive
    rng = np.random.default_rng(1)
    P = SchwarzianPolynomial(tuple(rng.normal(size=3) + 1j * rng.normal(size=3)))
    charts = build_charts(P)
    for i in range(P.order):
        z = overlap_samples(charts[i].frame, i, 50, rng)
        rep = overlap_consistency(charts[i], charts[(i + 1) % P.order], z)
        assert rep.residual < 1e-7


def test_overlap_rejects_points_outside():
    c0, c1 = build_charts(ONE)
    with pytest.raises(PreconditionError):
        overlap_consistency(c0, c1, [0.5 * c0.R * 1j])
    with pytest.raises(PreconditionError):
        c0.value(0.1)
