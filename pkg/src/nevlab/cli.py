"""Command-line entry point ``nevlab``.

Exit status: 0 when every selected check passes, 1 on a verification
finding, 2 on usage or configuration errors (no artifacts are written).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .aux_charts import PreconditionError, build_charts, critical_rays, overlap_consistency, overlap_samples
from .config import ConfigError, load_config
from .function_core import SchwarzianPolynomial, from_spec, tangent, verify_schwarzian
from .reports import Report, write_csv
from .wandering_lab import UsageError

EXIT_OK, EXIT_FINDING, EXIT_USAGE = 0, 1, 2
CHECKS = ("bounds", "angle", "strip", "expansion", "pullback", "monotone")


def _complex(text: str) -> complex:
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected 're,im', got {text!r}") from e
    if len(parts) == 1:
        return complex(parts[0])
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 're,im', got {text!r}")
    return complex(parts[0], parts[1])


def _floats(count: int):
    def parse(text: str) -> list[float]:
        vals = [float(p) for p in text.split(",")]
        if len(vals) != count:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated numbers")
        return vals
    return parse


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nevlab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--alpha0", type=float)
    common.add_argument("--seed", type=int)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("rays", parents=[common], help="critical rays and sectors")
    r.add_argument("--P", help="coefficients of P, low degree first, e.g. '0,-1' for -z")

    sub.add_parser("aux-check", parents=[common], help="round trip, asymptotic ratio and overlap of the charts")
    sub.add_parser("fit", parents=[common], help="tract Mobius fits, h'(0) and m_i")

    v = sub.add_parser("verify", parents=[common], help="strip and tract verifications")
    v.add_argument("--which", action="append", choices=CHECKS + ("all",))
    v.add_argument("--k", type=int, action="append")
    v.add_argument("--samples", type=int)

    w = sub.add_parser("wander", parents=[common], help="survival curve, avoidance and wandering pair")
    w.add_argument("--k", type=int, help="strip level of the root square")
    w.add_argument("--levels", type=int)
    w.add_argument("--samples", type=int)
    w.add_argument("--avoid", type=int, help="plane to avoid (1..N)")
    w.add_argument("--pair", action="store_true", help="also build the disjoint pair at mc.pair_k")

    o = sub.add_parser("orbit", parents=[common], help="one orbit with distances to the post-singular set")
    o.add_argument("--z", type=_complex)
    o.add_argument("--n-max", type=int)

    s = sub.add_parser("omega-stats", parents=[common], help="omega-limit statistics with a control map")
    s.add_argument("--seeds", type=int)
    s.add_argument("--n-max", type=int)
    s.add_argument("--no-control", action="store_true")

    g = sub.add_parser("render", parents=[common], help="escape-time picture (binary PPM)")
    g.add_argument("--window", type=_floats(4))
    g.add_argument("--resolution", type=_floats(2))
    g.add_argument("--n-max", type=int)

    sub.add_parser("report", parents=[common], help="fit + verify + survival summary")
    return p


def _overrides(a: argparse.Namespace) -> dict:
    o = {"alpha0": a.alpha0, "mc.seed": a.seed, "output": a.out}
    cmd = a.command
    if cmd == "verify":
        o["verify.which"] = None if not a.which else (list(CHECKS) if "all" in a.which else a.which)
        o["verify.k"] = a.k
        o["verify.samples"] = a.samples
    elif cmd == "wander":
        o.update({"mc.root_k": a.k, "mc.levels": a.levels, "mc.samples": a.samples, "mc.avoid": a.avoid})
    elif cmd == "orbit":
        o.update({"orbit.z": None if a.z is None else [a.z.real, a.z.imag], "orbit.n_max": a.n_max})
    elif cmd == "omega-stats":
        o.update({"omega.seeds": a.seeds, "omega.n_max": a.n_max, "omega.seed": a.seed})
        if a.no_control:
            o["omega.control_lambda"] = False
    elif cmd == "render":
        o.update({"render.window": a.window,
                  "render.resolution": None if a.resolution is None else [int(v) for v in a.resolution],
                  "render.n_max": a.n_max})
    return o


# ---------------------------------------------------------------- commands


def _system(cfg):
    from .tract_models import build_system
    ch = cfg["charts"]
    return build_system(from_spec(cfg["function"]), ch["eps0"], ch["R"], ch["c"])


def cmd_rays(cfg, a, rep: Report, out: Path):
    if a.P:
        P = SchwarzianPolynomial(tuple(_complex(t) for t in a.P.split(";")) if ";" in a.P
                                 else tuple(float(t) for t in a.P.split(",")))
    else:
        P = from_spec(cfg["function"]).schwarzian
    frame = critical_rays(P, cfg["charts"]["eps0"], cfg["charts"]["R"])
    base = -np.angle(P.leading) / frame.N
    closed = sorted(float(np.remainder(base + 2 * math.pi * j / frame.N, 2 * math.pi)) for j in range(frame.N))
    err = max(min(abs(t - c), 2 * math.pi - abs(t - c)) for t, c in zip(frame.thetas, closed))
    rep.results.update(thetas=list(frame.thetas), eps0=frame.eps0, R=frame.R, N=frame.N,
                       sectors=[frame.boundary_rays(i) for i in range(frame.N)])
    rep.add("rays_closed_form", err <= 1e-12, max_error=err)
    write_csv(out / "rays.csv", ["i", "theta", "lo", "hi"],
              [[i, t, *frame.boundary_rays(i)] for i, t in enumerate(frame.thetas)])


def cmd_aux_check(cfg, a, rep: Report, out: Path):
    f = from_spec(cfg["function"])
    charts = build_charts(f.schwarzian, cfg["charts"]["eps0"], cfg["charts"]["R"])
    rng = np.random.default_rng(cfg["mc"]["seed"])
    rows = []
    for ch in charts:
        h = ch.frame.half_opening * 0.9
        z = ch.frame.R * rng.uniform(2, 20, 100) * np.exp(1j * (ch.theta + rng.uniform(-h, h, 100)))
        back = ch.inverse(ch.value(z))
        rt = float(np.max(np.abs(back - z) / np.abs(z)))
        r_big = ch.big_radius()
        rep.add(f"round_trip[{ch.index}]", rt <= 1e-8, max_relative_error=rt)
        rep.add(f"asymptotic_ratio[{ch.index}]", math.isfinite(r_big), radius=r_big)
        row = [ch.index, rt, r_big]
        if ch.N > 1:
            nxt = charts[(ch.index + 1) % ch.N]
            ov = overlap_consistency(ch, nxt, overlap_samples(ch.frame, ch.index, 200, rng))
            rep.add(f"overlap[{ch.index}]", ov.residual < 1e-7 and ov.im_positive,
                    residual=ov.residual, constant=ov.constant)
            row += [ov.residual]
        rows.append(row)
    write_csv(out / "aux_check.csv", ["chart", "round_trip", "big_radius", "overlap_residual"], rows)


def cmd_fit(cfg, a, rep: Report, out: Path):
    S = _system(cfg)
    rows = []
    for (i, side), mdl in sorted(S.models.items()):
        rep.add(f"fit[{i}{side}]", mdl.residual < 1e-6, residual=mdl.residual, lam=mdl.lam,
                lam_fit=mdl.lam_fit, m=mdl.m, k=mdl.k)
        for h, r in sorted(mdl.free_residual_by_height.items()):
            rows.append([i, side, h, r])
    rep.results.update(c=S.c, m_i=S.m_values(), prepole_orders=S.pss.prepole_orders,
                       asymptotic_values=S.f.asymptotic_values())
    write_csv(out / "fit_residuals.csv", ["chart", "side", "height", "residual"], rows)


def _lattice(cfg, S, rep: Report):
    from .strip_dynamics import StripLattice
    a0 = float(cfg["alpha0"])
    try:
        return StripLattice(S, a0)
    except PreconditionError as e:
        rep.add("strip_lattice.admissible_alpha0", False, alpha0=a0, c=S.c, reason=str(e))
        return None


def _bounds(cfg, S, rep: Report, count: int):
    from .tract_models import tract_samples, verify_modulus_bounds
    a0 = float(cfg["alpha0"])
    rng = np.random.default_rng(cfg["mc"]["seed"])
    rep.results["m_i"] = S.m_values()
    rep.results["c"] = S.c
    if not a0 > S.c:
        rep.add("modulus_bounds.admissible_alpha0", False, alpha0=a0, c=S.c,
                reason="bounds need alpha0 > c so that e^{2c-2y} < 1")
        return
    for (i, side), mdl in sorted(S.models.items()):
        Z = tract_samples(mdl, count, rng, a0, a0 + 12.0)
        r = verify_modulus_bounds(mdl, Z, a0)
        rep.add(f"modulus_bounds[{i}{side}]", r.ok, samples=r.count, violations=len(r.violations),
                min_lower_margin=r.min_lower_margin, min_upper_margin=r.min_upper_margin, m=mdl.m)


def _verify(cfg, rep: Report, out: Path, which, ks, count):
    from .strip_dynamics import (empirical_N0, pullback_quads, verify_angle_lemma, verify_expansion,
                                 verify_strip_mapping, verify_vertical_monotone)
    S = _system(cfg)
    if "bounds" in which:
        _bounds(cfg, S, rep, count)
    rest = [w for w in which if w != "bounds"]
    if not rest:
        return
    L = _lattice(cfg, S, rep)
    if L is None:
        return
    rows, skipped = [], []
    for k in ks:
        for name in rest:
            try:
                if name == "angle":
                    r = verify_angle_lemma(L, k, count)
                    rep.add(f"angle_bounds[k={k}]", r.ok, mode=r.mode, violations=r.violations,
                            min_scaled_margin=r.min_scaled_margin)
                elif name == "strip":
                    r = verify_strip_mapping(L, k, count)
                    cert = None if r.certificate is None else r.certificate.describe()
                    rep.add(f"strip_mapping[k={k}]", r.ok, mode=r.mode, samples=r.samples, contained=r.contained,
                            certificate=cert)
                elif name == "expansion":
                    r = verify_expansion(L, k, count)
                    rep.add(f"expansion[k={k}]", r.ok, samples=r.samples, min_log_ratio=r.min_log_ratio,
                            bound=L.alpha.float_value(k) / (4 * math.pi))
                elif name == "monotone":
                    r = verify_vertical_monotone(L, k, count)
                    rep.add(f"vertical_monotone[k={k}]", r.ok, pairs=r.pairs, violations=r.violations,
                            min_log_margin=r.min_log_margin)
                elif name == "pullback":
                    rows_k = L.square_rows(k)
                    m = rows_k[min(cfg["mc"]["square"], len(rows_k) - 1)]
                    r = pullback_quads(L, cfg["mc"]["plane"], m, 0, k)
                    rep.add(f"pullback_leftover[k={k}]", r.ok, square=[m, 0], leftover=r.leftover, bound=r.bound,
                            mode=r.mode, resolution=r.resolution)
                rows.append([k, name, rep.checks[-1].ok])
            except PreconditionError as e:
                skipped.append({"k": k, "check": name, "reason": str(e)})
    if "angle" in rest:
        n0, _ = empirical_N0(L, max(ks + [2]), count)
        rep.results["empirical_N0"] = n0
    rep.results["skipped"] = skipped
    write_csv(out / "verify.csv", ["k", "check", "ok"], rows)


def cmd_verify(cfg, a, rep: Report, out: Path):
    _verify(cfg, rep, out, cfg["verify"]["which"], cfg["verify"]["k"], int(cfg["verify"]["samples"]))


def _survival(cfg, L, rep: Report, out: Path):
    from .wandering_lab import build_tree, mc_density, refine
    mc = cfg["mc"]
    k = mc["root_k"]
    rows_k = L.square_rows(k)
    m = rows_k[min(mc["square"], len(rows_k) - 1)]
    tree = build_tree(L, mc["plane"], m, 0, k)
    refine(tree, 1, samples=min(mc["samples"], 20000), seed=mc["seed"])
    curve = mc_density(tree, mc["levels"], mc["samples"], mc["seed"])
    rep.add(f"survival[k={k}]", curve.ok, C_fit=curve.C_fit, distortion=curve.distortion, checks=curve.checks)
    rep.results["C_fit"] = curve.C_fit
    rep.results["survival"] = curve.rows()
    cols = ["level", "survival", "ci_lo", "ci_hi", "kind", "decrement", "decrement_bound", "decrement_ok"]
    write_csv(out / "survival.csv", cols, [[r.get(c, "") for c in cols] for r in curve.rows()])
    return tree


def cmd_wander(cfg, a, rep: Report, out: Path):
    from .wandering_lab import build_wandering_pair, itinerary_avoidance
    mc = cfg["mc"]
    S = _system(cfg)
    L = _lattice(cfg, S, rep)
    if L is None:
        return
    q = mc["avoid"]
    if q is not None and not (isinstance(q, int) and 1 <= q <= L.N):
        raise UsageError(f"avoided plane must be in 1..{L.N}")
    tree = _survival(cfg, L, rep, out)
    if q is not None:
        av = itinerary_avoidance(tree, q, mc["levels"], min(mc["samples"], 20000), mc["seed"])
        rep.add(f"avoidance[q={q}]", av.ok, rate=av.rate, rate_se=av.rate_se, D_fit=av.D_fit,
                threshold=av.threshold)
        write_csv(out / "avoidance.csv", ["level", "fraction", "kind"],
                  list(zip(av.levels, av.fraction, av.kind)))
    if a.pair:
        wp = build_wandering_pair(L, mc["pair_k"], mc["plane"], mc["pair_samples"], mc["seed"])
        rep.add(f"wandering_pair[k={wp.k}]", wp.ok, S=wp.S, S_prime=wp.S_prime, initial_gap=wp.initial_gap,
                strip_index=wp.strip_index, preimage_separation=wp.preimage_separation)
        write_csv(out / "pair_gaps.csv", ["level", "strip", "gap_lower", "ok"],
                  [[g.level, g.strip, str(g.gap_lower), g.ok] for g in wp.gaps])


def cmd_orbit(cfg, a, rep: Report, out: Path):
    from .orbit_probes import CSV_HEADER, orbit
    f = from_spec(cfg["function"])
    z = complex(*cfg["orbit"]["z"])
    r = orbit(f, z, int(cfg["orbit"]["n_max"]))
    rep.results.update(seed_point=z, steps=r.steps, terminated=r.terminated, pole_hits=r.pole_hits,
                       omega_estimate=r.omega_estimate(), min_distance=float(np.min(r.distance)))
    rep.add("excursions_follow_poles", all(e[2] for e in r.excursions), excursions=len(r.excursions))
    write_csv(out / "orbit.csv", CSV_HEADER, r.csv_rows())


def cmd_omega(cfg, a, rep: Report, out: Path):
    from .orbit_probes import omega_stats
    o = cfg["omega"]
    f = from_spec(cfg["function"])
    kw = dict(count=o["seeds"], half_width=o["half_width"], n_max=o["n_max"], tol=o["tol"],
              min_approaches=o["min_approaches"], early_steps=o["early_steps"], seed=o["seed"])
    r = omega_stats(f, **kw)
    rep.add("omega.early_approach", r.early_fraction >= 0.95, fraction=r.early_fraction)
    rep.add("omega.full_set", r.full_fraction >= 0.8, fraction=r.full_fraction, ci=r.full_ci,
            per_target=r.per_target_fraction, terminated=r.terminated, overflowed=r.overflowed)
    rep.add("omega.excursions_follow_poles", r.excursions == r.excursions_after_pole, excursions=r.excursions)
    rep.results.update(targets=r.targets, tol_sensitivity=r.tol_sensitivity,
                       cutoff_sensitivity=r.cutoff_sensitivity)
    rows = [["main", r.early_fraction, r.full_fraction]]
    if o["control_lambda"]:
        lam = complex(*o["control_lambda"])
        c = omega_stats(tangent(lam), targets=r.targets, **kw)
        rep.add("omega.control_fails_full_set", c.full_fraction < 0.8, fraction=c.full_fraction,
                early_fraction=c.early_fraction, control_lambda=lam)
        rows.append(["control", c.early_fraction, c.full_fraction])
    write_csv(out / "omega.csv", ["map", "early_fraction", "full_fraction"], rows)


def cmd_render(cfg, a, rep: Report, out: Path):
    from .orbit_probes import render
    g = cfg["render"]
    f = from_spec(cfg["function"])
    img = render(f, tuple(g["window"]), tuple(int(v) for v in g["resolution"]), int(g["n_max"]))
    out.mkdir(parents=True, exist_ok=True)
    (out / "render.ppm").write_bytes(img.ppm())
    counts = np.bincount(img.classes.ravel(), minlength=3)
    rep.results.update(width=img.width, height=img.height, basin_fraction=img.basin_fraction,
                       class_counts={"pole_escape": counts[0], "basin": counts[1], "undecided": counts[2]})


def cmd_report(cfg, a, rep: Report, out: Path):
    cmd_fit(cfg, a, rep, out)
    _verify(cfg, rep, out, list(CHECKS), [0, 1], int(cfg["verify"]["samples"]))
    S = _system(cfg)
    L = _lattice(cfg, S, rep)
    if L is not None:
        _survival(cfg, L, rep, out)


COMMANDS = {"rays": cmd_rays, "aux-check": cmd_aux_check, "fit": cmd_fit, "verify": cmd_verify,
            "wander": cmd_wander, "orbit": cmd_orbit, "omega-stats": cmd_omega, "render": cmd_render,
            "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    p = _parser()
    try:
        a = p.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = load_config(a.config, _overrides(a))
    except ConfigError as e:
        print(f"nevlab: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg["output"])
    rep = Report(a.command, cfg)
    try:
        COMMANDS[a.command](cfg, a, rep, out)
    except (UsageError, ConfigError) as e:
        print(f"nevlab: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PreconditionError as e:
        rep.add("precondition", False, reason=str(e))
    path = rep.write(out, a.command.replace("-", "_"))
    if rep.ok:
        print(f"nevlab {a.command}: all {len(rep.checks)} checks passed ({path})")
        return EXIT_OK
    print(f"nevlab {a.command}: failing checks: {', '.join(rep.failing())} ({path})", file=sys.stderr)
    return EXIT_FINDING


if __name__ == "__main__":
    sys.exit(main())
