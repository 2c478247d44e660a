import cmath
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nevlab.function_core import (
    INF,
    Mobius,
    NotAllPrepoles,
    SchwarzianPolynomial,
    chordal,
    exponential,
    from_spec,
    ode_quotient,
    post_singular_set,
    tangent,
    verify_schwarzian,
)

finite = st.floats(-4, 4, allow_nan=False)


def test_polynomial_order_is_degree_plus_two():
    assert SchwarzianPolynomial((1,)).order == 2
    assert SchwarzianPolynomial((0, -1)).order == 3
    assert SchwarzianPolynomial((0, 0, 1, 0)).order == 4  # trailing zero dropped
    with pytest.raises(ValueError):
        SchwarzianPolynomial((0, 0))


def test_flagship_point_values(flagship):
    assert flagship.evaluate(0).value == 0
    with mpmath.workdps(40):
        oracle = complex(-0.5j * mpmath.pi * mpmath.tan(1))
    got = flagship.evaluate(1).value
    assert abs(got - oracle) < 1e-14 * abs(oracle)
    assert abs(got - (-2.4463j)) < 1e-4
    far = flagship.evaluate(math.pi / 2)
    assert far.near_pole and far.value == INF


def test_schwarzian_of_tan_exp_and_mobius_conjugate():
    z = [0.3 + 0.2j, -1.1 + 0.4j, 0.7 - 0.9j]
    r = verify_schwarzian(tangent(1), SchwarzianPolynomial((1,)), z)
    assert r.passed and r.max_residual < 1e-6
    r = verify_schwarzian(exponential(), SchwarzianPolynomial((-0.25,)), z)
    assert r.passed
    M = Mobius(2 + 1j, -0.5, 0.3j, 1.2)
    r2 = verify_schwarzian(tangent(1).post_compose(M), SchwarzianPolynomial((1,)), z)
    assert r2.passed
    # a wrong P must fail
    assert not verify_schwarzian(tangent(1), SchwarzianPolynomial((2,)), z).passed


def test_schwarzian_excludes_points_next_to_poles():
    r = verify_schwarzian(tangent(1), SchwarzianPolynomial((1,)), [math.pi / 2 + 1e-3, 0.1])
    assert len(r.excluded) == 1 and r.passed


@settings(max_examples=25, deadline=None)
@given(st.complex_numbers(max_magnitude=3), st.complex_numbers(max_magnitude=3),
       st.complex_numbers(max_magnitude=3), st.complex_numbers(max_magnitude=3))
def test_mobius_invariance_of_schwarzian(a, b, c, d):
    if abs(a * d - b * c) < 0.1:
        return
    M = Mobius(a, b, c, d)
    g = tangent(1).post_compose(M)
    pts = [0.3 + 0.2j, -0.4 + 0.5j]
    if g.poles() and min(abs(p - z) for p in g.poles() for z in pts) < 0.3:
        return
    assert verify_schwarzian(g, SchwarzianPolynomial((1,)), pts, tol=1e-5).passed


def test_flagship_post_singular_set(flagship):
    pss = post_singular_set(flagship)
    assert sorted(v.real for v in pss.finite_points) == pytest.approx([-math.pi / 2, math.pi / 2], abs=1e-14)
    assert pss.prepole_orders == [1, 1]
    assert pss.points()[-1] == INF
    # asymptotic values are the limits of f along the imaginary axis
    with mpmath.workdps(30):
        up = complex(-0.5j * mpmath.pi * mpmath.tan(40j))
    assert abs(up - flagship.asymptotic_values()[0]) < 1e-12


def test_control_tangent_is_not_all_prepoles():
    with pytest.raises(NotAllPrepoles):
        post_singular_set(tangent(1))
    # the orbit of i stays on the imaginary axis
    w = 1j
    for _ in range(100):
        w = complex(tangent(1)(w))
        assert abs(w.real) < 1e-12


def test_prepole_order_two():
    # a tanh a = -i pi/2 makes f(i a) = pi/2, a pole
    a = complex(mpmath.findroot(lambda t: 1j * t * mpmath.tanh(t) - mpmath.pi / 2, 1 + 1j))
    pss = post_singular_set(tangent(a))
    assert pss.prepole_orders == [2, 2]
    assert len(pss.finite_points) == 4


def test_ode_backend_matches_closed_form():
    f_ode = ode_quotient([1], mobius=Mobius(-0.5j * math.pi, 0, 0, 1))
    f = tangent()
    rng = np.random.default_rng(0)
    z = 5 * np.sqrt(rng.random(1000)) * np.exp(2j * np.pi * rng.random(1000))
    a, b = f_ode(z), f(z)
    keep = np.abs(b) < 1e8
    assert np.max(np.abs(a - b)[keep] / np.abs(b)[keep].clip(1e-300)) < 1e-8


@settings(max_examples=200, deadline=None)
@given(finite, finite)
def test_odd_symmetry(x, y):
    f = tangent()
    z = complex(x, y)
    u, v = complex(f(z)), complex(f(-z))
    if abs(u) > 1e8:
        return
    assert abs(u + v) <= 1e-12 * max(1.0, abs(u))


def test_chordal_metric():
    assert chordal(INF, 0) == pytest.approx(2.0)
    assert chordal(3 + 4j, INF) == pytest.approx(2 / math.sqrt(26))
    assert chordal(INF, INF) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.complex_numbers(max_magnitude=1e6), st.complex_numbers(max_magnitude=1e6),
       st.complex_numbers(max_magnitude=1e6))
def test_chordal_triangle(a, b, c):
    assert chordal(a, c) <= chordal(a, b) + chordal(b, c) + 1e-12
    assert 0 <= chordal(a, b) <= 2 + 1e-15


def test_pole_catalog_and_residues(flagship):
    poles = flagship.poles()
    assert all(abs(cmath.cos(p)) < 1e-12 for p in poles)
    i = poles.index(min(poles, key=lambda p: abs(p - math.pi / 2)))
    # -(pi i/2) tan w ~ (pi i/2)/(w - pi/2)
    assert abs(flagship.pole_data(i).residue - 0.5j * math.pi) < 1e-10


def test_from_spec_rejects_unknown():
    with pytest.raises(ValueError):
        from_spec({"family": "nope"})
    with pytest.raises(ValueError):
        from_spec({"family": "tangent", "lambda": [0, 1], "extra": 1})
    f = from_spec({"family": "tangent", "lambda": [0.0, -math.pi / 2]})
    assert abs(complex(f(1.0)) - complex(tangent()(1.0))) < 1e-15
