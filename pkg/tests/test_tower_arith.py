import math
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nevlab.tower_arith import (
    PROMOTE_FLOOR,
    TOP,
    AlphaAffine,
    AlphaTable,
    Ordering,
    TowerInterval,
    TowerReal,
    alpha_enclosures,
    alpha_sequence,
    tower_add,
    tower_cmp,
    tower_exp,
    tower_log,
    tower_mul,
    tower_sub,
)

small = st.floats(-600, 600, allow_nan=False)
mant = st.floats(PROMOTE_FLOOR, 7000, allow_nan=False)


@st.composite
def towers(draw, max_depth=3):
    d = draw(st.integers(0, max_depth))
    if d == 0:
        return TowerReal(0, draw(st.floats(-1e300, 1e300, allow_nan=False)))
    return TowerReal(d, draw(st.floats(PROMOTE_FLOOR, math.nextafter(TOP, 0), allow_nan=False)))


def test_alpha_values():
    a = alpha_sequence(2, 3.0, 6)
    assert a[1].depth == 0 and a[1].mantissa == pytest.approx(403.4287935, abs=1e-7)
    with mpmath.workdps(30):
        two_e6 = float(2 * mpmath.exp(6))
    assert a[2].depth == 1 and a[2].mantissa == pytest.approx(two_e6, rel=1e-15)
    assert a[2].mantissa == pytest.approx(806.85758699, abs=1e-8)
    for lo, hi in zip(a, a[1:]):
        assert hi > lo
    enc = alpha_enclosures(2, 3.0, 6)
    for x, e in zip(a, enc):
        assert e.contains(x)
    for lo, hi in zip(enc, enc[1:]):
        assert tower_cmp(hi, lo) is Ordering.GREATER


def test_exp_log_examples():
    assert tower_exp(TowerReal(1, 750.0)) == TowerReal(2, 750.0)
    a2 = alpha_sequence(2, 3.0, 3)[2]
    assert tower_log(a2).mantissa == pytest.approx(2 * math.exp(6), rel=1e-15)
    a = alpha_enclosures(2, 3.0, 3)
    big = a[2] * TowerInterval.point(1e100)
    assert tower_cmp(a[3], big) is Ordering.GREATER
    assert str(a2) == "E^1(806.857587)"


def test_canonical_form():
    with pytest.raises(ValueError):
        TowerReal(1, 5.0)
    with pytest.raises(ValueError):
        TowerReal(0, 1e306)
    assert TowerReal.of(1e306).depth == 1
    assert TowerReal.of(1e306).mantissa == pytest.approx(math.log(1e306))


@settings(max_examples=2000, deadline=None)
@given(towers())
def test_log_exp_round_trip(x):
    lo = tower_log(tower_exp(x, False), False)
    hi = tower_log(tower_exp(x, True), True)
    assert lo <= x <= hi


@settings(max_examples=500, deadline=None)
@given(small, small)
def test_float_agreement(a, b):
    exact = Fraction(a) + Fraction(b)
    assert Fraction(tower_add(a, b, False).mantissa) <= exact <= Fraction(tower_add(a, b, True).mantissa)
    exact = Fraction(a) - Fraction(b)
    assert Fraction(tower_sub(a, b, False).mantissa) <= exact <= Fraction(tower_sub(a, b, True).mantissa)
    if a >= 0 and b >= 0:
        exact = Fraction(a) * Fraction(b)
        assert Fraction(tower_mul(a, b, False).mantissa) <= exact <= Fraction(tower_mul(a, b, True).mantissa)
    with mpmath.workdps(40):
        e = mpmath.exp(a)
        assert tower_exp(a, False).mantissa <= e <= tower_exp(a, True).mantissa
    # float ulp-scale agreement
    assert tower_add(a, b, True).mantissa - tower_add(a, b, False).mantissa <= 4 * math.ulp(a + b) + 1e-300


@settings(max_examples=500, deadline=None)
@given(mant, mant)
def test_depth_one_sum_against_log_oracle(v, w):
    x, y = TowerReal(1, v), TowerReal(1, w)
    lo, hi = tower_add(x, y, False), tower_add(x, y, True)
    with mpmath.workdps(50):
        exact = max(v, w) + mpmath.log1p(mpmath.exp(-abs(mpmath.mpf(v) - w)))
    assert lo.depth == hi.depth == 1
    assert lo.mantissa <= exact <= hi.mantissa


@settings(max_examples=500, deadline=None)
@given(towers(2), towers(2))
def test_ordering_is_total_and_consistent(x, y):
    c = tower_cmp(x, y)
    if x < y:
        assert c is Ordering.LESS and tower_cmp(y, x) is Ordering.GREATER
    elif y < x:
        assert c is Ordering.GREATER
    else:
        assert c is Ordering.INDETERMINATE


@settings(max_examples=500, deadline=None)
@given(st.integers(2, 4), mant, st.floats(-1, 1, allow_nan=False))
def test_absorption_sound(d, v, b):
    X = TowerInterval.point(TowerReal(d, v))
    diff = (X + b) - X
    assert diff.lo <= diff.hi
    assert diff.contains(TowerReal(0, b)) or b == 0.0


def test_deep_absorption_is_fast():
    x = TowerReal(40, 800.0)
    y = tower_add(x, 0.5, True)
    assert y == x.next_up()
    assert tower_add(x, 0.5, False) == x
    assert tower_sub(x, 0.5, False) == x.next_down()


def test_negative_results_degrade_to_valid_bounds():
    a, b = TowerReal(1, 800.0), TowerReal(1, 801.0)
    assert tower_sub(a, b, True).mantissa == 0.0
    assert tower_sub(a, b, False).mantissa == -math.inf


def test_alpha_affine_cancellation():
    t = AlphaTable(2, 3.0, 6)
    a = lambda k: AlphaAffine(t, {k: 1.0})  # noqa: E731
    # N (alpha_k + 2 alpha_{k-1}) - N alpha_k = 2 N alpha_{k-1}
    for k in (1, 3, 5):
        e = (a(k) + a(k - 1).scale(2)).scale(2) - a(k).scale(2)
        v = e.evaluate()
        assert v.sign == 1
        assert e.coeffs == {k - 1: 4.0}
        four = t[k - 1] * 4.0
        assert v.magnitude.lo <= four.hi and four.lo <= v.magnitude.hi
    # log alpha_k = N alpha_{k-1} holds down to k = 0
    assert t[-1].lo.mantissa <= math.log(3.0) / 2 <= t[-1].hi.mantissa
    assert (a(4) - a(3)).is_positive()
    assert (a(2) - a(3)).is_negative()
