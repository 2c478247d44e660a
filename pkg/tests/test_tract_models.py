import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nevlab.aux_charts import PreconditionError
from nevlab.function_core import Mobius, tangent
from nevlab.tract_models import (
    LOWER,
    UPPER,
    NoAdmissibleThreshold,
    OverflowRegime,
    choose_c,
    distortion_budget,
    fit_tract,
    koebe_T,
    modulus_bounds,
    phi,
    tract_samples,
    univalence_check,
    verify_modulus_bounds,
)


def test_fitted_coefficients_match_exponential_form(flag_system):
    lam = -0.5j * math.pi
    R = flag_system.charts[0].R
    mdl = flag_system.model(0, UPPER)
    A, B, C, D = (complex(v) for v in (mdl.free_fit.a, mdl.free_fit.b, mdl.free_fit.c, mdl.free_fit.d))
    want = np.array([lam * cmath.exp(1j * R), -lam * cmath.exp(-1j * R),
                     1j * cmath.exp(1j * R), 1j * cmath.exp(-1j * R)])
    got = np.array([A, B, C, D])
    got = got / got[3] * want[3]
    assert np.max(np.abs(got - want)) < 1e-9
    assert abs(B / D - lam * 1j) < 1e-6


def test_asymptotic_value_is_limit_along_tract(flag_system):
    for (i, side), mdl in flag_system.models.items():
        s = 1 if side == UPPER else -1
        Z = 0.7 + 1j * s * 25
        z = flag_system.charts[i].inverse(Z)
        assert abs(complex(flag_system.f(z)) - mdl.lam_fit) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3))
def test_projective_scaling_leaves_map_unchanged(t):
    M = Mobius(1 + 2j, -0.3, 0.5j, 2.0)
    Mt = Mobius(t * M.a, t * M.b, t * M.c, t * M.d)
    w = np.array([0.1 + 0.2j, -3.0, 5j])
    assert np.allclose(M(w), Mt(w), rtol=1e-12)


def test_threshold_choice(flagship, flag_system):
    assert flag_system.c == 1.0
    # post-singular points +-pi/2 sit on the real axis, outside every tract
    for ch in flag_system.charts:
        for p in flag_system.pss.finite_points:
            Z = ch.value(p, check=False) if ch.frame.in_sector(ch.index, p) else 0j
            assert abs(Z.imag) < 1.0

    def broken(model):
        # critical point inside the disk while c is small
        if model.c < 3:
            b = 0.5 * model.r
            return (lambda x: x * (1 - x / (2 * b)), lambda x: 1 - x / b)
        return model.h, model.h_derivative

    assert choose_c(flagship, flag_system.charts, h_factory=broken) == 3.0
    with pytest.raises(NoAdmissibleThreshold):
        choose_c(flagship, flag_system.charts, h_factory=broken, cap=2.0)


def test_univalence_detects_critical_point():
    rep = univalence_check(lambda x: x * (1 - x), lambda x: 1 - 2 * x, 0.9)
    assert not rep.ok and rep.winding_dh == 1
    assert univalence_check(lambda x: x, lambda x: 1 + 0 * x, 0.9).ok


def test_h_at_zero_and_derivative(flag_system):
    for mdl in flag_system.models.values():
        assert abs(mdl.h(0)) < 1e-15
        assert abs(abs(mdl.hprime0) - 2) < 1e-10
        assert mdl.m == pytest.approx(0.5, abs=1e-4)
        residue = complex(*mdl.hprime0_checks["residue"])
        assert abs(residue - mdl.hprime0) < 1e-10
        xi = 1e-6 * cmath.exp(0.3j)
        assert abs(mdl.h(xi) / xi / mdl.hprime0 - 1) < 1e-4


def test_residue_oracle_for_hprime(flag_system):
    # tan w ~ -1/(w - pi/2): h'(0) = -M'(0)/lambda with M'(0) = det/D^2
    lam = -0.5j * math.pi
    mdl = flag_system.model(0, UPPER)
    p, q, r, s = (complex(v) for v in (mdl.mob.a, mdl.mob.b, mdl.mob.c, mdl.mob.d))
    dM = (p * s - q * r) / s ** 2
    assert abs(-dM / lam - mdl.hprime0) < 1e-10


def test_factorized_phi_matches_direct(flagship, flag_system):
    ch = flag_system.charts[0]
    mdl = fit_tract(flagship, ch, UPPER, 3.0, k=1)
    for x in np.linspace(0.1, 3.0, 7):
        z = ch.inverse(x + 8j)
        _, _, rel = phi(mdl, z, route_check=True)
        assert rel < 1e-6


def test_phi_agrees_across_overlap(flag_system):
    up = flag_system.model(0, UPPER)
    lo = flag_system.model(1, LOWER)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.5, 1.5, 20) + 1j * rng.uniform(3.5, 8, 20)
    for z in pts:
        a = phi(up, z)
        b = phi(lo, z)
        assert abs(a - b) < 1e-6 * abs(a)


def test_overflow_regime_and_tract_membership(flag_system):
    mdl = flag_system.model(0, UPPER)
    with pytest.raises(OverflowRegime):
        mdl.phi_from_Z(1 + 400j)
    with pytest.raises(PreconditionError):
        mdl.phi_from_Z(1 + 0.5j)
    # log form still works far out
    L = mdl.log_phi_from_Z(1 + 400j)
    assert L.real == pytest.approx(math.log(0.5) + 800, rel=1e-12)


def test_modulus_bound_example(flagship, flag_system):
    ch = flag_system.charts[0]
    mdl = fit_tract(flagship, ch, UPPER, 3.0, k=1)
    lo, hi = modulus_bounds(0.5, 10.0, 3.0)
    assert lo == pytest.approx(0.5 * (math.exp(20) - 2 * math.exp(6) + math.exp(-8)), rel=1e-15)
    assert hi == pytest.approx(0.5 * (math.exp(20) + 2 * math.exp(6) + math.exp(-8)), rel=1e-15)
    for x in (0.3, 1.1, 2.9):
        v = abs(mdl.phi_from_Z(x + 10j))
        assert lo <= v <= hi
    with pytest.raises(PreconditionError):
        verify_modulus_bounds(mdl, [1 + 3j])


def test_modulus_bounds_sampled(flag_system):
    rng = np.random.default_rng(4)
    for mdl in flag_system.models.values():
        Z = tract_samples(mdl, 500, rng, 3.0001, 60.0)
        rep = verify_modulus_bounds(mdl, Z, alpha0=3.0)
        assert rep.ok and rep.ratio_monotone
        assert rep.min_lower_margin > 0 and rep.min_upper_margin > 0


def test_residual_behavior(flag_system, airy_system):
    # the tangent model is exact: residuals sit at roundoff at every height
    for mdl in flag_system.models.values():
        assert max(mdl.residual_by_height.values()) < 1e-14
    # the Airy model error is real and decays with height
    for mdl in airy_system.models.values():
        c = mdl.c
        assert mdl.residual_by_height[c + 2] >= 10 * mdl.residual_by_height[c + 6]


def test_koebe_conformance(flag_system, airy_system):
    for system in (flag_system, airy_system):
        for mdl in system.models.values():
            b = distortion_budget(mdl, eta=0.5)
            assert b.ok and b.T == pytest.approx(81.0)
    assert koebe_T(0) == 1.0


def test_per_tract_m(flag_system, airy_system):
    lo, hi = flag_system.global_m()
    assert lo == pytest.approx(0.5, abs=1e-12) and hi == pytest.approx(0.5, abs=1e-12)
    assert set(flag_system.m_values()) == {"0L", "0U", "1L", "1U"}
    lo3, hi3 = airy_system.global_m()
    assert 0.3 < lo3 <= hi3 < 0.4
