"""Strip lattice of the flagship: heights, tower arithmetic and the strip checks.

    python3 demos/strips_and_towers.py
"""

from nevlab.function_core import tangent
from nevlab.strip_dynamics import (StripLattice, StripState, empirical_N0, pullback_quads, verify_expansion,
                                   verify_strip_mapping)
from nevlab.tower_arith import alpha_enclosures
from nevlab.tract_models import build_system


def main() -> None:
    system = build_system(tangent())
    print(f"threshold c = {system.c}, m_i = {system.m_values()}")
    lat = StripLattice(system, 3.0)

    for k, a in enumerate(alpha_enclosures(2, 3.0, 5)):
        print(f"alpha_{k} in [{a.lo}, {a.hi}]")
    for k in range(2):
        lo, hi = lat.hor_bounds_float(k)
        print(f"Hor_{k}: {lo:.4f} < Im Z < {hi:.4f}")

    # one return step from Hor_1 lands far up in Hor_2, and the next one is pure tower arithmetic
    y = lat.alpha.float_value(1) + 9.0
    st, regime = lat.psi(0, 0, StripState(0, y, 0.5 * sum(lat.rect_x(0, 0, 1))))
    print(f"Psi from height {y:.2f} ({regime}): new height {st.y}, strip {lat.strip_of(st.y).k}")
    st2, regime2 = lat.psi(0, 1, StripState(0, st.y, 0.5 * sum(lat.rect_x(0, 1, 2))))
    print(f"next step ({regime2}): height {st2.y}, strip {lat.strip_of(st2.y).k}")

    for k in range(6):
        r = verify_strip_mapping(lat, k, count=100)
        how = f"{r.contained}/{r.samples} samples" if r.mode == "machine" else r.certificate.describe()
        print(f"strip mapping k={k} [{r.mode}]: ok={r.ok} ({how})")
    e = verify_expansion(lat, 1)
    print(f"expansion into Hor_1: min log(|Psi'| 4 pi / alpha_1) = {e.min_log_ratio:.3f} over {e.samples} points")
    n0, _ = empirical_N0(lat, k_max=3, count=100)
    print(f"first level from which the angle bounds hold: {n0}")
    m = lat.square_rows(1).start
    pb = pullback_quads(lat, 0, m, 0, resolution=256)
    print(f"pullback of square ({m}, 0) of Hor_1: leftover {pb.leftover:.4f} <= {pb.bound:.4f}"
          f" = (4 sqrt2 pi^2 + 6)/alpha_1")


if __name__ == "__main__":
    main()
