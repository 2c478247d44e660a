"""Orbits of the flagship map, omega-limit statistics against a control, and a PPM picture.

    python3 demos/orbits_and_picture.py [outdir]
"""

import sys
from pathlib import Path

from nevlab.function_core import tangent
from nevlab.orbit_probes import omega_stats, orbit, post_singular_points, render


def main(out: Path) -> None:
    f = tangent()
    targets = post_singular_points(f)
    print("post-singular set:", targets)

    r = orbit(f, 0.3 + 0.7j, n_max=60)
    print(f"orbit of 0.3+0.7i: {r.steps} steps, ended by {r.terminated}, "
          f"min distance to the targets {r.distance.min():.3g}")
    for n, logmod, after_pole in r.excursions[:4]:
        print(f"  step {n}: log|f^n z| = {logmod:.4g} (previous step next to a pole: {after_pole})")

    flag = omega_stats(f, count=300, n_max=400)
    ctrl = omega_stats(tangent(1), count=300, n_max=400, targets=targets)
    print(f"flagship: early approach {flag.early_fraction:.3f}, approaches all targets {flag.full_fraction:.3f}")
    print(f"control tan z: early approach {ctrl.early_fraction:.3f}, all targets {ctrl.full_fraction:.3f}")

    out.mkdir(parents=True, exist_ok=True)
    for name, g in (("flagship", f), ("control", tangent(1))):
        img = render(g, resolution=(240, 240), n_max=80)
        path = out / f"{name}.ppm"
        path.write_bytes(img.ppm())
        print(f"{path}: basin fraction {img.basin_fraction:.4f}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out"))
