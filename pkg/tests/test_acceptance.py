"""Acceptance gates, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and
then asserts the same condition, so a failing gate shows up both ways.
"""

import math
import shutil
import time

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from nevlab.aux_charts import build_charts, critical_rays, overlap_consistency, overlap_samples
from nevlab.cli import main
from nevlab.function_core import Mobius, SchwarzianPolynomial, tangent, verify_schwarzian
from nevlab.orbit_probes import omega_stats, post_singular_points
from nevlab.strip_dynamics import pullback_quads, verify_expansion, verify_strip_mapping
from nevlab.tower_arith import (
    PROMOTE_FLOOR,
    TOP,
    Ordering,
    TowerInterval,
    TowerReal,
    alpha_enclosures,
    alpha_sequence,
    tower_cmp,
    tower_exp,
    tower_log,
)
from nevlab.tract_models import UPPER, phi, tract_samples, verify_modulus_bounds
from nevlab.wandering_lab import build_tree, build_wandering_pair, itinerary_avoidance, mc_density, refine

from conftest import record_gate


def gate(n: int, ok: bool, detail: str):
    record_gate(n, bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def test_c01_critical_rays():
    t0 = time.perf_counter()
    cases = {(1,): [0, math.pi], (0, -1): [math.pi / 3, math.pi, 5 * math.pi / 3],
             (0, 0, 1): [0, math.pi / 2, math.pi, 3 * math.pi / 2]}
    err = 0.0
    for coeffs, expected in cases.items():
        th = critical_rays(SchwarzianPolynomial(coeffs)).thetas
        err = max(err, max(abs(a - b) for a, b in zip(sorted(th), expected)))
    dt = time.perf_counter() - t0
    gate(1, err <= 1e-12 and dt < 1.0, f"max angle error {err:.2e} (<=1e-12), {dt:.3f} s (<1 s)")


def test_c02_schwarzian():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    z = rng.uniform(-1.2, 1.2, 20) + 1j * rng.uniform(-1, 1, 20)
    P = SchwarzianPolynomial((1,))
    r1 = verify_schwarzian(tangent(), P, z, tol=1e-6)
    g = tangent().post_compose(Mobius(2 + 1j, -0.5, 0.3j, 1.2))
    r2 = verify_schwarzian(g, P, z, tol=1e-6)
    dt = time.perf_counter() - t0
    ok = r1.passed and r2.passed and dt < 5
    gate(2, ok, f"residuals tan {r1.max_residual:.1e}, conjugate {r2.max_residual:.1e} (<=1e-6), {dt:.2f} s (<5 s)")


def test_c03_aux_chart():
    rng = np.random.default_rng(3)
    Ps = [SchwarzianPolynomial((1,)), SchwarzianPolynomial((0, 0, 1)),
          SchwarzianPolynomial(tuple(rng.normal(size=3) + 1j * rng.normal(size=3)))]
    rt, ratio, ov = 0.0, 0.0, 0.0
    for P in Ps:
        charts = build_charts(P)
        for ch in charts:
            h = ch.frame.half_opening * 0.9
            zs = ch.R * rng.uniform(1.05, 30, 100) * np.exp(1j * (ch.theta + rng.uniform(-h, h, 100)))
            back = ch.inverse(ch.value(zs))
            rt = max(rt, float(np.max(np.abs(back - zs) / np.maximum(1, np.abs(zs)))))
            rb = ch.big_radius()
            hh = ch.frame.half_opening * 0.99
            far = rb * np.geomspace(1, 1e4, 10)[:, None] * np.exp(1j * (ch.theta + np.linspace(-hh, hh, 7)))[None]
            ratio = max(ratio, float(np.max(np.abs(ch.asymptotic_ratio(far.ravel()) - 1))))
            if P.order > 1:
                nxt = charts[(ch.index + 1) % P.order]
                ov = max(ov, overlap_consistency(ch, nxt, overlap_samples(ch.frame, ch.index, 50, rng)).residual)
    ok = rt <= 1e-8 and ratio <= 0.01 + 1e-12 and ov < 1e-7
    gate(3, ok, f"round trip {rt:.1e} (<=1e-8), ratio deviation {ratio:.4f} (<=1%), overlap {ov:.1e} (<1e-7)")


def test_c04_tract_fit(flag_system, airy_system):
    mdl = flag_system.model(0, UPPER)
    bd = complex(mdl.free_fit.b / mdl.free_fit.d)
    bd_err = abs(bd - math.pi / 2)
    m_err = max(abs(m.m - 0.5) for m in flag_system.models.values())
    res_ok = all(abs(complex(*m.hprime0_checks["residue"]) - m.hprime0) < 1e-10 for m in flag_system.models.values())
    c = flag_system.c
    decays = [m.residual_by_height[c + 2] / m.residual_by_height[c + 6] for m in flag_system.models.values()]
    airy = [m.residual_by_height[m.c + 2] / m.residual_by_height[m.c + 6] for m in airy_system.models.values()]
    ok = bd_err <= 1e-6 and m_err <= 1e-4 and res_ok and min(decays) >= 10
    gate(4, ok, f"|B/D - pi/2| {bd_err:.1e}, |m_i - 0.5| {m_err:.1e}, residue oracle {res_ok}, "
                f"tan residual decay c+2 -> c+6 min {min(decays):.2f}x (>=10x; residuals at roundoff), "
                f"airy_symmetric decay min {min(airy):.0f}x")


def test_c05_factorization(flag_system):
    rng = np.random.default_rng(5)
    worst = 0.0
    count = 0
    for mdl in flag_system.models.values():
        Z = tract_samples(mdl, 250, rng, mdl.c + 1.0, 8.0)
        for Zs in Z:
            z = mdl.chart.inverse(complex(Zs))
            _, _, rel = phi(mdl, z, route_check=True)
            worst = max(worst, rel)
            count += 1
    gate(5, count == 1000 and worst <= 1e-5, f"{count} points, max relative difference {worst:.1e} (<=1e-5)")


def test_c06_modulus_bounds(flag_system):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    total, bad = 0, 0
    for mdl in flag_system.models.values():
        Z = tract_samples(mdl, 2500, rng, 3.0 + 1e-9, 3.0 + 40.0)
        r = verify_modulus_bounds(mdl, Z, alpha0=3.0)
        total += r.count
        bad += len(r.violations)
    dt = time.perf_counter() - t0
    gate(6, total == 10 ** 4 and bad == 0 and dt < 30, f"{total - bad}/{total} inside both bounds, {dt:.1f} s (<30 s)")


def test_c07_strip_mapping(flag_lattice):
    t0 = time.perf_counter()
    machine = [verify_strip_mapping(flag_lattice, k, count=200) for k in (0, 1)]
    tower = [verify_strip_mapping(flag_lattice, k) for k in range(2, 6)]
    dt = time.perf_counter() - t0
    m_ok = all(r.mode == "machine" and r.contained == r.samples and r.ok for r in machine)
    t_ok = all(r.mode == "tower" and r.certificate.ok for r in tower)
    cont = ", ".join(f"k={r.k}: {r.contained}/{r.samples}" for r in machine)
    gate(7, m_ok and t_ok and dt < 60, f"{cont}; tower certificates k=2..5 {t_ok}; {dt:.1f} s (<60 s)")


def test_c08_expansion(flag_lattice):
    r = verify_expansion(flag_lattice, 1, count=1000)
    bound = flag_lattice.alpha.float_value(1) / (4 * math.pi)
    gate(8, r.ok and r.samples >= 1000 and r.min_log_ratio >= 0,
         f"{r.samples} points, min log(|Psi'| / {bound:.1f}) = {r.min_log_ratio:.2f} (>=0)")


def test_c09_pullback(flag_lattice):
    m = flag_lattice.square_rows(1).start
    r = pullback_quads(flag_lattice, 0, m, 0, resolution=512)
    gate(9, r.k == 1 and r.resolution == 512 and r.leftover <= r.bound,
         f"leftover {r.leftover:.4f} <= bound {r.bound:.4f} on a 512^2 grid")


def test_c10_survival(flag_lattice):
    tree = build_tree(flag_lattice, 0, flag_lattice.square_rows(0).start, 0)
    c = mc_density(tree, levels=5, samples=10 ** 5, seed=0)
    sampled = [i for i, k in enumerate(c.kind) if k == "sampled"]
    ci_ok = all(c.ci[i][0] <= c.survival[i] <= c.ci[i][1] for i in sampled)
    ok = c.ok and ci_ok and len(c.decrement_ok) == 4 and all(c.decrement_ok)
    gate(10, ok, f"survival {[round(s, 4) for s in c.survival]}, C_fit {c.C_fit:.3f}, checks {c.checks}")


def test_c11_wandering_pair(flag_lattice):
    p = build_wandering_pair(flag_lattice, k=1, levels=5)
    gaps_ok = len(p.gaps) == 5 and all(g.ok for g in p.gaps)
    adv = all(p.strip_index[l] == p.k + l for l in range(1, 6))
    gate(11, p.ok and gaps_ok and adv, f"gap certificates l=1..5 {gaps_ok}, strip indices {p.strip_index}")


def test_c12_avoidance(flag_lattice, airy_lattice):
    out = []
    for lat in (flag_lattice, airy_lattice):
        tree = refine(build_tree(lat, 0, lat.square_rows(0).start, 0), 1)
        a = itinerary_avoidance(tree, lat.N, levels=4, samples=20000, seed=0)
        out.append(a)
    ok = all(a.ok for a in out)
    detail = "; ".join(f"N={a.N}: rate {a.rate:.4f} <= {a.threshold:.4f} + 2se ({a.rate_se:.4f}), D_fit {a.D_fit:.4f}"
                       for a in out)
    gate(12, ok, detail)


def test_c13_omega_limits(flagship):
    t0 = time.perf_counter()
    o = omega_stats(flagship, 1000, n_max=1000, seed=0)
    c = omega_stats(tangent(1), 1000, n_max=1000, seed=0, targets=post_singular_points(flagship))
    dt = time.perf_counter() - t0
    ok = o.early_fraction >= 0.95 and o.full_fraction >= 0.8 and c.full_fraction < 0.8 and dt < 120
    gate(13, ok, f"early {o.early_fraction:.3f} (>=0.95), all three {o.full_fraction:.3f} (>=0.8), "
                 f"control {c.full_fraction:.3f} (<0.8), {dt:.1f} s (<120 s)")


mant = st.floats(PROMOTE_FLOOR, math.nextafter(TOP, 0), allow_nan=False)


@st.composite
def towers(draw):
    d = draw(st.integers(0, 3))
    if d == 0:
        return TowerReal(0, draw(st.floats(-1e300, 1e300, allow_nan=False)))
    return TowerReal(d, draw(mant))


def test_c14_tower_properties():
    runs = {"round_trip": 0, "ordering": 0, "absorption": 0}

    @settings(max_examples=4000, deadline=None, database=None)
    @given(towers())
    def round_trip(x):
        runs["round_trip"] += 1
        assert tower_log(tower_exp(x, False), False) <= x <= tower_log(tower_exp(x, True), True)

    @settings(max_examples=3000, deadline=None, database=None)
    @given(towers(), towers())
    def ordering(x, y):
        runs["ordering"] += 1
        c = tower_cmp(x, y)
        assert c is (Ordering.LESS if x < y else Ordering.GREATER if y < x else Ordering.INDETERMINATE)

    @settings(max_examples=3000, deadline=None, database=None)
    @given(st.integers(2, 5), mant, st.floats(-1, 1, allow_nan=False))
    def absorption(d, v, b):
        runs["absorption"] += 1
        X = TowerInterval.point(TowerReal(d, v))
        diff = (X + b) - X
        assert diff.lo <= diff.hi and (b == 0.0 or diff.contains(TowerReal(0, b)))

    round_trip()
    ordering()
    absorption()
    a = alpha_sequence(2, 3.0, 6)
    enc = alpha_enclosures(2, 3.0, 6)
    mono = all(lo < hi for lo, hi in zip(a, a[1:])) and \
        all(tower_cmp(hi, lo) is Ordering.GREATER for lo, hi in zip(enc, enc[1:]))
    n = sum(runs.values())
    gate(14, n >= 10 ** 4 and mono, f"{n} property examples passed {runs}, alpha monotone to depth 6 {mono}")


def test_c15_reproducibility(tmp_path):
    commands = [["orbit", "--n-max", "100"],
                ["omega-stats", "--seeds", "100", "--n-max", "200"],
                ["wander", "--samples", "5000", "--avoid", "1", "--seed", "4"]]
    same = True
    files = 0
    for args in commands:
        out, first = tmp_path / "out", tmp_path / "first"
        codes = [main(args + ["--out", str(out)])]
        shutil.move(out, first)
        codes.append(main(args + ["--out", str(out)]))
        a = {p.name: p.read_bytes() for p in first.iterdir() if p.suffix in (".csv", ".json")
             and not p.name.endswith(".meta.json")}
        b = {p.name: p.read_bytes() for p in out.iterdir() if p.suffix in (".csv", ".json")
             and not p.name.endswith(".meta.json")}
        same = same and a == b and bool(a) and codes[0] == codes[1]
        files += len(a)
        shutil.rmtree(out)
        shutil.rmtree(first)
    gate(15, same, f"{files} CSV/JSON artifacts byte-identical across two runs")

