"""Survival curve, itinerary avoidance and a wandering pair for N = 2 and N = 3.

    python3 demos/wandering.py
"""

from nevlab.function_core import airy_symmetric, tangent
from nevlab.strip_dynamics import StripLattice
from nevlab.tract_models import build_system
from nevlab.wandering_lab import build_tree, build_wandering_pair, itinerary_avoidance, mc_density, refine


def show_survival(lat: StripLattice, label: str) -> None:
    tree = refine(build_tree(lat, 0, lat.square_rows(0).start, 0), 3, samples=20000)
    curve = mc_density(tree, levels=4, samples=20000)
    print(f"{label}: C_fit = {curve.C_fit:.3f}, checks ok = {curve.ok}")
    for row in curve.rows():
        print(f"  level {row['level']} [{row['kind']}]: {row['survival']:.4f}"
              f" ({row['ci_lo']:.4f}, {row['ci_hi']:.4f})")
    av = itinerary_avoidance(tree, lat.N, levels=4, samples=20000)
    print(f"  avoiding plane {lat.N}: rate {av.rate:.4f} vs D_fit (N-1)/N = {av.threshold:.4f}")


def main() -> None:
    flag = StripLattice(build_system(tangent()), 3.0)
    show_survival(flag, "tangent, N = 2")
    show_survival(StripLattice(build_system(airy_symmetric()), 3.0), "symmetric Airy, N = 3")

    pair = build_wandering_pair(flag, k=1)
    print(f"pair in Hor_1: squares {pair.S} and {pair.S_prime}, initial gap {pair.initial_gap:.3f}")
    for g in pair.gaps:
        print(f"  level {g.level}: strip {pair.strip_index[g.level]}, gap >= {g.gap_lower} ({g.ok})")


if __name__ == "__main__":
    main()
