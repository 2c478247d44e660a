"""Nested pullbacks of lattice squares, survival statistics and wandering pairs.

A root square S of plane i0 in Hor_k is cut into the regions P^j: points Z
of Rect_j whose image lattice square is covered by Psi(Rect_j ∩ S).  The
points of P^j are then followed into the next strip and the construction is
repeated.  A sample "survives l steps" when it passes l such certified
steps.  Membership is certified with the Koebe quarter theorem: the disk of
radius dist(Z, boundary) is mapped univalently, so its image contains the
disk of radius |Psi'(Z)| dist / 4, and a disk of radius sqrt(2) pi around
Psi(Z) covers the whole lattice square of Psi(Z).

Only the first two steps can be sampled: the position of a point inside its
lattice square is lost once heights become towers.  Deeper levels are
enclosed by the gap fraction of the rectangle structure, weighted by the
measured distortion of the inverse branches.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.stats import binomtest

from .aux_charts import PreconditionError
from .function_core import chordal
from .strip_dynamics import (LEFTOVER_CONSTANT, SQRT2PI, GapCertificate, StripLattice, _log_to_tower,
                             gap_step_certificate)
from .tower_arith import AlphaAffine, Ordering, TowerInterval

LOG_BAND = math.log(4 * SQRT2PI)  # log|Psi'| + log dist must exceed this
GAP_CONSTANT = 6 / math.pi  # alpha_s * (fraction of a square lying in the gaps between rectangles)
FLOAT_ROUTE_LOG_LIMIT = 16.0  # keeps the float image error below ~1e-7, far inside the rectangle margins
CHUNK = 8192


class UsageError(ValueError):
    pass


class NoAdmissiblePair(PreconditionError):
    def __init__(self, k: int, minimal_k: int | None):
        self.k = k
        self.minimal_k = minimal_k
        super().__init__(f"no admissible square pair in Hor_{k}; minimal admissible k = {minimal_k}")


def wilson(count: int, total: int, level: float = 0.95) -> tuple[float, float]:
    if total == 0:
        return 0.0, 1.0
    ci = binomtest(int(count), int(total)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly.real, poly.imag
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NEVLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- one certified step


@dataclass
class Positions:
    """Points of lattice squares: plane, square (row, col) and offsets inside the square.

    ``y`` is the float height or nan when it is a tower; ``log_y`` is always
    finite.  ``err`` bounds the absolute error of the offsets.
    """

    plane: np.ndarray
    row: np.ndarray  # object array of python ints
    col: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    y: np.ndarray
    log_y: np.ndarray
    err: np.ndarray

    def __len__(self) -> int:
        return self.fx.size

    def take(self, idx) -> "Positions":
        return Positions(*(getattr(self, f)[idx] for f in
                           ("plane", "row", "col", "fx", "fy", "y", "log_y", "err")))

    def points(self, lattice: StripLattice) -> np.ndarray:
        """Float Z where representable (nan elsewhere)."""
        x0 = np.array([lattice.anchor(int(p), lattice.N) for p in self.plane])
        col = np.array([_as_float(c) for c in self.col])
        return (x0 + col * math.pi + self.fx) + 1j * self.y


def _as_float(n: int) -> float:
    try:
        return float(n)
    except OverflowError:
        return math.nan


def root_positions(lattice: StripLattice, plane: int, m: int, n: int, Z: np.ndarray, err: float) -> Positions:
    x0, _, y0, _ = lattice.square(plane, m, n)
    size = Z.size
    return Positions(np.full(size, plane), np.full(size, m, dtype=object), np.full(size, n, dtype=object),
                     Z.real - x0, Z.imag - y0, Z.imag.copy(), np.log(Z.imag), np.full(size, err))


def _label(lattice: StripLattice, fx: np.ndarray, s: int):
    """Rectangle label and distance to the rectangle's vertical sides from the offset in the square."""
    N = lattice.N
    step = math.pi / N
    col = np.clip(np.floor(fx / step), 0, N - 1)
    off = fx - col * step
    d = lattice.rect_margin(s)
    dist = np.minimum(off - d, step - d - off)
    j = np.where(dist > 0, N - 1 - col, -1).astype(int)
    return j, dist


def _log_dpsi_lower(lattice: StripLattice, s: int, pos: Positions, j: np.ndarray) -> np.ndarray:
    """Lower bound for log|Psi'_{plane, j}| at the positions (strip s)."""
    out = np.full(len(pos), -np.inf)
    N = lattice.N
    floaty = np.isfinite(pos.y) & (pos.y < 1e15)
    Z = pos.points(lattice)
    for p in range(N):
        for jj in range(N):
            sel = floaty & (pos.plane == p) & (j == jj)
            if not sel.any():
                continue
            z = Z[sel]
            eps = lattice.lg_error(p, np.abs(z))
            with np.errstate(invalid="ignore"):
                out[sel] = lattice.log_abs_dpsi(p, jj, z) - 4 * N * eps - 1e-9
    # far out the finite differences lose every digit; use the strip bound there too
    tower = ~floaty | ~np.isfinite(out)
    if tower.any() and _strip_ok(lattice, s):
        # |dlog Psi| >= N/2 and |Psi| >= Im Psi >= alpha_{s+1} on certified rectangles
        a = lattice.alpha.float_value(s)
        out[tower] = math.log(N / 2) + N * a - 10.0 if math.isfinite(a) else math.inf
    return out


def _strip_ok(lattice: StripLattice, s: int) -> bool:
    try:
        return lattice.strip_certificate(s).ok
    except PreconditionError:
        return False


def _next_square_in_strip(lattice: StripLattice, s: int) -> bool:
    """Whole lattice squares around Psi(Rect_{., s, .}) lie in Hor_{s+1} by the strip certificate."""
    if not _strip_ok(lattice, s):
        return False
    cert = lattice.strip_certificate(s)
    if not cert.ok:
        return False
    lo, _ = lattice.hor_bounds_float(s + 1)
    lm = cert.lower_margin.lower_float()
    if not math.isfinite(lo) or lm > 50:
        return True
    return lo * math.expm1(lm) > 2 * math.pi and cert.upper_margin.lower_float() > 1e-6


def _rows_in_strip(lattice: StripLattice, s: int, pos: Positions) -> np.ndarray:
    """Lattice squares of the positions contained in Hor_s (explicit for float heights)."""
    lo, hi = lattice.hor_bounds_float(s)
    out = np.zeros(len(pos), dtype=bool)
    floaty = np.isfinite(pos.y)
    if floaty.any():
        rows = np.array([_as_float(r) for r in pos.row[floaty]])
        out[floaty] = (rows * math.pi >= lo) & ((rows + 1) * math.pi <= hi)
    if (~floaty).any():
        # tower heights: locate the enclosure of the height itself
        for idx in np.nonzero(~floaty)[0]:
            y = _log_to_tower(pos.log_y[idx] - 1e-9, pos.log_y[idx] + 1e-9)
            loc = lattice.strip_of(y)
            out[idx] = loc.kind == "strip" and loc.k == s
    return out


@dataclass
class StepResult:
    label: np.ndarray  # rectangle index (-1 in gaps)
    passed: np.ndarray  # certified membership in P^label
    dist: np.ndarray  # distance to the boundary of Rect ∩ square (minus errors)
    log_dpsi: np.ndarray
    distortion: np.ndarray  # area distortion bound of the inverse branch on the image square


def certify_step(lattice: StripLattice, s: int, pos: Positions, distortion: bool = False) -> StepResult:
    """One level of the construction for points of squares in Hor_s."""
    j, dx = _label(lattice, pos.fx, s)
    dist = np.minimum.reduce([dx, pos.fy, math.pi - pos.fy]) - pos.err
    logd = _log_dpsi_lower(lattice, s, pos, j)
    with np.errstate(divide="ignore", invalid="ignore"):
        passed = (j >= 0) & (dist > 0) & (np.log(np.where(dist > 0, dist, 1.0)) + logd > LOG_BAND)
    D = np.ones(len(pos))
    if distortion and passed.any():
        D[passed] = _distortion(lattice, pos.take(passed), j[passed], logd[passed])
    return StepResult(j, passed, dist, logd, D)


def _distortion(lattice: StripLattice, pos: Positions, j: np.ndarray, logd: np.ndarray) -> np.ndarray:
    """exp(4 r G): r = 4 sqrt2 pi/|Psi'| bounds the pulled-back square, G = |d log Psi'/dZ| on it."""
    out = np.ones(len(pos))
    Z = pos.points(lattice)
    N = lattice.N
    for p in range(N):
        for jj in range(N):
            sel = (pos.plane == p) & (j == jj) & np.isfinite(Z.imag)
            if not sel.any():
                continue
            z = Z[sel]
            h = 1e-4
            d1 = lattice.dlog_psi(p, jj, z)
            d2 = (lattice.dlog_psi(p, jj, z + h) - lattice.dlog_psi(p, jj, z - h)) / (2 * h)
            G = np.abs(d1 + d2 / d1) * (1 + 4 * N * lattice.lg_error(p, np.abs(z)))
            r = 4 * SQRT2PI * np.exp(-logd[sel])
            out[sel] = np.exp(4 * r * G * 1.01)
    return out


def image_positions(lattice: StripLattice, pos: Positions, j: np.ndarray, extra_dps: int = 30) -> Positions:
    """Positions of Psi_{plane, j} of float points, by the float route or the mp route."""
    Z = pos.points(lattice)
    N = lattice.N
    size = len(pos)
    out = Positions(j.copy(), np.empty(size, dtype=object), np.empty(size, dtype=object), np.zeros(size),
                    np.zeros(size), np.full(size, np.nan), np.zeros(size), np.zeros(size))
    for p in range(N):
        for jj in range(N):
            sel = np.nonzero((pos.plane == p) & (j == jj))[0]
            if not sel.size:
                continue
            z = Z[sel]
            L = lattice.log_psi(p, jj, z)
            if lattice.model_exact and float(L.real.max()) < FLOAT_ROUTE_LOG_LIMIT:
                W = lattice.psi_array(p, jj, z)
                u = W.real - lattice.anchor(jj, N)
                col = np.floor(u / math.pi)
                row = np.floor(W.imag / math.pi)
                out.col[sel] = [int(c) for c in col]
                out.row[sel] = [int(r) for r in row]
                out.fx[sel] = u - col * math.pi
                out.fy[sel] = W.imag - row * math.pi
                out.y[sel] = W.imag
                out.log_y[sel] = np.log(W.imag)
                # the samples themselves are exact; only rounding and the anchors of plane jj matter
                out.err[sel] = np.abs(W) * (np.abs(L) + 1) * 4e-16 + anchor_error(lattice)
            else:
                _mp_images(lattice, p, jj, z, L, sel, out, extra_dps)
    return out


def _mp_images(lattice, p, jj, z, L, sel, out, extra_dps):
    dps = lattice.mp_dps_for(float(L.real.max()), extra_dps)
    x0, aerr = lattice.anchor_mp(jj, dps)
    # |W| <= 10^(dps - extra_dps), so the absolute error of W is about 10^-extra_dps
    err = aerr + 10.0 ** (-(extra_dps - 5))
    with mpmath.workdps(dps):
        left = x0 - mpmath.pi  # anchor(jj, N)
        for idx, zz in zip(sel, z):
            W = lattice.psi_mp(p, jj, complex(zz), dps)
            u = mpmath.re(W) - left
            c = mpmath.floor(u / mpmath.pi)
            im = mpmath.im(W)
            r = mpmath.floor(im / mpmath.pi)
            out.col[idx] = int(c)
            out.row[idx] = int(r)
            out.fx[idx] = float(u - c * mpmath.pi)
            out.fy[idx] = float(im - r * mpmath.pi)
            ly = float(mpmath.log(im)) if im > 0 else -math.inf
            out.log_y[idx] = ly
            out.y[idx] = float(im) if ly < 700 else math.nan
            out.err[idx] = err


# ---------------------------------------------------------------- sample traces


@dataclass
class SampleTrace:
    """Root samples of one square followed through the measured levels."""

    plane: int
    square: tuple[int, int]
    k: int
    seed: int
    points: np.ndarray
    depth: np.ndarray  # certified steps per sample (0..measured)
    labels: np.ndarray  # (M, measured) rectangle labels, -1 when not reached
    measured: int
    distortion: float  # max area distortion of the inverse branches on level-1 image squares
    heights: np.ndarray = field(repr=False, default=None)  # log Im of the first image (nan if none)
    first_images: Positions | None = field(repr=False, default=None)

    def survivors(self, steps: int) -> np.ndarray:
        return self.depth >= steps


def _root_samples(lattice, plane, m, n, count, seed):
    x0, x1, y0, y1 = lattice.square(plane, m, n)
    children = np.random.SeedSequence(seed).spawn((count + CHUNK - 1) // CHUNK)
    parts = []
    left = count
    for ss in children:
        rng = np.random.default_rng(ss)
        c = min(CHUNK, left)
        left -= c
        u = rng.random((2, c))
        parts.append((x0 + math.pi * u[0]) + 1j * (y0 + math.pi * u[1]))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)


def anchor_error(lattice: StripLattice) -> float:
    return 1e-14 if lattice.model_exact else 1e-8


def trace_samples(lattice: StripLattice, plane: int, m: int, n: int = 0, k: int | None = None,
                  count: int = 10000, seed: int = 0, levels: int = 2, images_for=None) -> SampleTrace:
    """Follow ``count`` uniform points of square (m, n) of ``plane`` through up to two certified steps.

    ``images_for`` optionally restricts the (costly) second step to samples
    whose first label satisfies the predicate.
    """
    if levels not in (1, 2):
        raise UsageError("only the first two levels can be sampled")
    k = _root_strip(lattice, plane, m, n) if k is None else k
    Z = _root_samples(lattice, plane, m, n, count, seed)
    pos = root_positions(lattice, plane, m, n, Z, anchor_error(lattice))
    depth = np.zeros(count, dtype=int)
    labels = np.full((count, levels), -1, dtype=int)
    heights = np.full(count, np.nan)
    first = None

    def work(idx):
        sub = pos.take(idx)
        st = certify_step(lattice, k, sub, distortion=True)
        return idx, st

    blocks = np.array_split(np.arange(count), max(1, count // CHUNK))
    with ThreadPoolExecutor(_threads()) as ex:
        results = list(ex.map(work, blocks))
    Dmax = 1.0
    for idx, st in results:
        labels[idx, 0] = st.label
        ok = st.passed
        depth[idx[ok]] = 1
        if ok.any():
            Dmax = max(Dmax, float(st.distortion[ok].max()))
    surv1 = np.nonzero(depth >= 1)[0]
    need_images = levels >= 2 or not _next_square_in_strip(lattice, k)
    if need_images and surv1.size:
        chosen = surv1 if images_for is None else surv1[images_for(labels[surv1, 0])]
        img = image_positions(lattice, pos.take(chosen), labels[chosen, 0])
        heights[chosen] = img.log_y
        inside = _rows_in_strip(lattice, k + 1, img)
        lost = chosen[~inside]
        depth[lost] = 0
        first = img
        if levels >= 2:
            keep = inside
            st2 = certify_step(lattice, k + 1, img.take(keep), distortion=False)
            idx2 = chosen[keep]
            labels[idx2, 1] = st2.label
            good = st2.passed & _next_square_in_strip(lattice, k + 1)
            depth[idx2[good]] = 2
            if images_for is not None:
                # samples not followed keep depth 1 only as a lower bound; mark them
                skipped = np.setdiff1d(surv1, chosen)
                labels[skipped, 1] = -2
    return SampleTrace(plane, (m, n), k, seed, Z, depth, labels, levels, Dmax, heights, first)


def _root_strip(lattice: StripLattice, plane: int, m: int, n: int) -> int:
    _, _, y0, y1 = lattice.square(plane, m, n)
    a, b = lattice.strip_of(y0), lattice.strip_of(y1)
    if a.kind != "strip" or b.kind != "strip" or a.k != b.k:
        raise PreconditionError("root square is not inside a single strip")
    return a.k


# ---------------------------------------------------------------- itinerary tree


@dataclass
class ItineraryNode:
    """Points of the root square whose first ``depth`` images follow ``labels``.

    planes[t] is the plane of the t-th image (planes[0] is the root plane and
    planes[t+1] == labels[t]); the depth-th image lies in squares of Hor_{image_strip}.
    """

    depth: int
    planes: tuple
    labels: tuple
    image_strip: int
    region: np.ndarray | None  # polygon for depth <= 1
    area: float  # polygon area, sampled or modeled estimate
    area_kind: str  # "polygon", "sampled", "modeled"
    area_ci: tuple[float, float] | None = None
    samples: int = 0
    leftover: float | None = None
    note: str = ""


@dataclass
class ItineraryTree:
    lattice: StripLattice
    plane: int
    square: tuple[int, int]
    k: int
    nodes: dict = field(default_factory=dict)
    pruned: list = field(default_factory=list)
    trace: SampleTrace | None = None
    depth: int = 0

    def children(self, labels: tuple) -> list[ItineraryNode]:
        d = len(labels) + 1
        return [v for key, v in self.nodes.items() if len(key) == d and key[:-1] == labels]

    def level(self, depth: int) -> list[ItineraryNode]:
        return [v for key, v in self.nodes.items() if len(key) == depth]

    @property
    def root(self) -> ItineraryNode:
        return self.nodes[()]


def build_tree(lattice: StripLattice, plane: int, m: int, n: int = 0, k: int | None = None) -> ItineraryTree:
    k = _root_strip(lattice, plane, m, n) if k is None else k
    x0, x1, y0, y1 = lattice.square(plane, m, n)
    poly = np.array([x0 + 1j * y0, x1 + 1j * y0, x1 + 1j * y1, x0 + 1j * y1])
    tree = ItineraryTree(lattice, plane, (m, n), k)
    tree.nodes[()] = ItineraryNode(0, (plane,), (), k, poly, math.pi ** 2, "polygon")
    return tree


def child_polygon(lattice: StripLattice, plane: int, m: int, n: int, k: int, j: int,
                  per_side: int = 30) -> np.ndarray | None:
    """Certified inner polygon of P^j: Rect_j ∩ S inset by the Koebe band 4 sqrt2 pi / |Psi'|.

    The inset curve x = xl + r(y) is convex in y, so chords stay inside the region.
    """
    xl, xr = lattice.rect_x(plane, j, k, n)
    _, _, y0, y1 = lattice.square(plane, m, n)
    N = lattice.N

    def band(z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        ld = lattice.log_abs_dpsi(plane, j, z) - 4 * N * lattice.lg_error(plane, np.abs(z))
        return np.exp(LOG_BAND - ld) * (1 + 1e-6)

    xc = 0.5 * (xl + xr)
    yb = y0 + float(band(xc + 1j * y0)[0])
    yt = y1 - float(band(xc + 1j * y1)[0])
    if yt <= yb:
        return None
    # heights crowd near the bottom where the band is widest
    t = np.linspace(0, 1, per_side)
    ys = yb + (yt - yb) * t ** 2
    left = xl + band(xl + 1j * ys)
    right = xr - band(xr + 1j * ys)
    if np.any(left >= right):
        return None
    poly = np.concatenate([left + 1j * ys, (right + 1j * ys)[::-1]])
    return poly


def refine(tree: ItineraryTree, levels: int, samples: int = 20000, seed: int = 0,
           resolution: int = 512, images_for=None) -> ItineraryTree:
    """Grow the tree to ``levels``: depth 1 as polygons, depth 2 sampled, deeper levels modeled."""
    L = tree.lattice
    N = L.N
    plane, (m, n), k = tree.plane, tree.square, tree.k
    tree.depth = levels
    min_area = (math.pi / resolution) ** 2
    total = 0.0
    for j in range(N):
        poly = child_polygon(L, plane, m, n, k, j)
        area = 0.0 if poly is None else polygon_area(poly)
        key = (j,)
        if area < min_area:
            tree.pruned.append((key, f"area {area:.3g} below resolution^2"))
            continue
        tree.nodes[key] = ItineraryNode(1, (plane, j), key, k + 1, poly, area, "polygon")
        total += area
    tree.root.leftover = 1 - total / math.pi ** 2
    if levels < 2:
        return tree
    tr = trace_samples(L, plane, m, n, k, samples, seed, levels=2, images_for=images_for)
    tree.trace = tr
    M = tr.points.size
    for key, node in list(tree.nodes.items()):
        if len(key) != 1:
            continue
        here = (tr.labels[:, 0] == key[0]) & (tr.depth >= 1)
        node.samples = int(here.sum())
        followed = here & (tr.labels[:, 1] != -2)
        passed = followed & (tr.depth >= 2)
        node.leftover = 1 - passed.sum() / followed.sum() if followed.any() else None
        for j2 in range(N):
            key2 = key + (j2,)
            cnt = int(np.sum(passed & (tr.labels[:, 1] == j2)))
            if cnt == 0 and not followed.any():
                continue
            if cnt == 0:
                tree.pruned.append((key2, "no samples"))
                continue
            lo, hi = wilson(cnt, M)
            tree.nodes[key2] = ItineraryNode(2, (plane, key[0], j2), key2, k + 2, None, cnt / M * math.pi ** 2,
                                             "sampled", (lo * math.pi ** 2, hi * math.pi ** 2), cnt)
    # deeper levels: each child keeps a 1/N share of the parent up to gap and distortion factors
    for d in range(3, levels + 1):
        s = k + d - 1
        keep = 1 - float(_gap_fraction_upper(L, s))
        for key, node in list(tree.nodes.items()):
            if len(key) != d - 1:
                continue
            for j in range(N):
                key2 = key + (j,)
                tree.nodes[key2] = ItineraryNode(d, node.planes + (j,), key2, k + d, None, node.area * keep / N,
                                                 "modeled", None, 0, None,
                                                 "position inside squares is beyond representable precision")
    return tree


def _gap_fraction_upper(lattice: StripLattice, s: int) -> float:
    """Fraction of a square of Hor_s outside the certified pullbacks (gaps plus Koebe bands), upper bound."""
    N = lattice.N
    A = lattice.alpha
    # gaps: 6/(pi alpha_s); band: perimeter 2 pi (N + 1) times 4 sqrt2 pi/|Psi'| with |Psi'| >= (N/2) alpha_{s+1}
    gaps = AlphaAffine(A, {s: -1.0}, math.log(GAP_CONSTANT)).exp_bounds()[1]
    band = AlphaAffine(A, {s: -float(N)}, math.log(2 * (N + 1) * 4 * SQRT2PI * 2 / N / math.pi)).exp_bounds()[1]
    return gaps + band


def _gap_constant_upper(lattice: StripLattice, s: int) -> float:
    """alpha_s times the gap-plus-band fraction: 6/pi plus a term that is tiny for tower strips."""
    N = lattice.N
    # alpha_s exp(-N alpha_s) = exp(N alpha_{s-1} - N alpha_s)
    tiny = AlphaAffine(lattice.alpha, {s - 1: float(N), s: -float(N)},
                       math.log(2 * (N + 1) * 4 * SQRT2PI * 2 / N / math.pi)).exp_bounds()[1]
    return GAP_CONSTANT + tiny


# ---------------------------------------------------------------- survival curve


@dataclass
class SurvivalCurve:
    k: int
    samples: int
    seed: int
    levels: list  # 1..L
    survival: list  # point estimates
    ci: list  # Wilson intervals (sampled) or enclosures (modeled)
    kind: list  # "sampled" or "modeled"
    decrement: list  # survival(l) - survival(l+1) for l = 1..L-1 (upper bounds for modeled levels)
    decrement_bound: list  # C_fit / alpha_{k+l}, as floats (0.0 when below float range)
    decrement_ok: list
    C_fit: float
    distortion: float
    level1_floor: float  # 1 - (4 sqrt2 pi^2 + 6)/alpha_k - 3 sigma
    polygon_fraction: float
    product_lower: float
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def rows(self) -> list[dict]:
        out = []
        for idx, l in enumerate(self.levels):
            row = {"level": l, "survival": self.survival[idx], "ci_lo": self.ci[idx][0],
                   "ci_hi": self.ci[idx][1], "kind": self.kind[idx]}
            if idx < len(self.decrement):
                row.update(decrement=self.decrement[idx], decrement_bound=self.decrement_bound[idx],
                           decrement_ok=self.decrement_ok[idx])
            out.append(row)
        return out


def mc_density(tree: ItineraryTree, levels: int = 5, samples: int = 100000, seed: int = 0) -> SurvivalCurve:
    """Fraction of the root square surviving l = 1..levels steps, with C_fit and its checks.

    C_fit = alpha_k * (Wilson upper bound of the level-1 loss); the decrement
    between levels l and l+1 is then compared with C_fit / alpha_{k+l}.
    """
    if levels < 2:
        raise UsageError("need at least two levels")
    L = tree.lattice
    k = tree.k
    if tree.trace is None or tree.trace.points.size != samples or tree.trace.seed != seed \
            or -2 in tree.trace.labels[:, 1]:
        tree.trace = trace_samples(L, tree.plane, *tree.square, k, samples, seed, levels=2)
    tr = tree.trace
    M = tr.points.size
    counts = [int(np.sum(tr.depth >= l)) for l in (1, 2)]
    surv = [c / M for c in counts]
    ci = [wilson(c, M) for c in counts]
    kind = ["sampled", "sampled"]
    D = tr.distortion
    # modeled levels: loss at the step from level l to l+1 happens in Hor_{k+l}
    lo_prev, hi_prev = ci[-1]
    for l in range(3, levels + 1):
        g = min(1.0, D * _gap_fraction_upper(L, k + l - 1))
        lo_prev, hi_prev = lo_prev * (1 - g), hi_prev
        surv.append(surv[-1] * (1 - min(1.0, _gap_fraction_upper(L, k + l - 1))))
        ci.append((lo_prev, hi_prev))
        kind.append("modeled")
    dec0 = M - counts[0]
    C_fit = L.alpha.float_value(k) * wilson(dec0, M)[1]
    decs, bounds, oks = [], [], []
    for l in range(1, levels):
        s = k + l
        a_s = L.alpha.float_value(s)
        bound = C_fit / a_s if math.isfinite(a_s) else 0.0
        if l == 1:
            lost = counts[0] - counts[1]
            d = lost / M
            d_lo, _ = wilson(lost, M)
            ok = d <= bound and d_lo <= bound
        else:
            # modeled: survival(l) * D * (gap constant) / alpha_s <= C_fit / alpha_s
            hi_s = ci[l - 1][1]
            const = hi_s * D * _gap_constant_upper(L, s)
            d = const / a_s if math.isfinite(a_s) else 0.0
            ok = const <= C_fit
        decs.append(d)
        bounds.append(bound)
        oks.append(bool(ok))
    sigma = math.sqrt(max(surv[0] * (1 - surv[0]), 1e-300) / M)
    a_k = L.alpha.float_value(k)
    floor1 = 1 - LEFTOVER_CONSTANT / a_k - 3 * sigma
    if tree.root.leftover is None:
        refine(tree, 1)
    poly = 1 - tree.root.leftover
    prod = 1.0
    for l in range(levels):
        a = L.alpha.float_value(k + l)
        if math.isfinite(a):
            prod *= max(0.0, 1 - C_fit / a)
    checks = {
        "non_increasing": all(surv[i + 1] <= surv[i] for i in range(len(surv) - 1)),
        "level1_floor": surv[0] >= floor1,
        "level1_matches_polygon": abs(surv[0] - poly) <= 3 * sigma + 1e-4,
        "decrements": all(oks),
        "product_bound_consistent": ci[-1][1] >= prod,
    }
    return SurvivalCurve(k, M, seed, list(range(1, levels + 1)), surv, ci, kind, decs, bounds, oks, C_fit, D,
                         floor1, poly, prod, checks)


# ---------------------------------------------------------------- wandering pair


@dataclass
class GapRecord:
    level: int
    strip: int
    gap_lower: TowerInterval  # certified lower bound 2 alpha_{k+l-1} on Im-gaps at this level
    certificates: list  # GapCertificate chain used
    ok: bool


@dataclass
class WanderingPair:
    k: int
    plane: int
    S: tuple[int, int]
    S_prime: tuple[int, int]
    initial_gap: float
    initial_ok: bool
    W1: np.ndarray  # survivor samples of S (root coordinates)
    W2: np.ndarray
    survivor_levels: int
    gaps: list  # GapRecord per level
    strip_index: dict  # level -> strip index of both families
    sampled_gap_log: float | None  # min log(Im gap) between first images of W2 and W1
    preimage_separation: float  # min chordal distance between Z^-1(W1) and Z^-1(W2)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        gaps_ok = all(g.ok for g in self.gaps)
        strips_ok = all(v == self.k + l for l, v in self.strip_index.items())
        return self.initial_ok and gaps_ok and strips_ok and self.preimage_separation > 0 \
            and self.W1.size > 0 and self.W2.size > 0


def admissible_pair_rows(lattice: StripLattice, k: int) -> tuple[int, int] | None:
    """Rows (m, m') of two squares of Hor_k with Im-gap >= 2 alpha_{k-1}, or None."""
    try:
        rows = lattice.square_rows(k)
    except PreconditionError:
        return None
    if not len(rows):
        return None
    gap = 2 * lattice.alpha[k - 1]
    m = rows[0]
    _, hi = lattice.hor_bounds_float(k)
    m2 = m + 1
    while True:
        g = TowerInterval.point(m2 * math.pi - (m + 1) * math.pi)
        if g.cmp(gap) is Ordering.GREATER:
            break
        m2 += 1
        if (m2 + 1) * math.pi > hi or m2 - m > 10 ** 6:
            return None
    if (m2 + 1) * math.pi > hi:
        return None
    return m, m2


def build_wandering_pair(lattice: StripLattice, k: int = 1, plane: int = 0, samples: int = 200, seed: int = 0,
                         levels: int = 5) -> WanderingPair:
    """Two squares of Hor_k with certified Im-gaps along their whole forward itineraries."""
    rows = admissible_pair_rows(lattice, k)
    if rows is None:
        minimal = next((kk for kk in range(8) if admissible_pair_rows(lattice, kk)), None)
        raise NoAdmissiblePair(k, minimal)
    m, m2 = rows
    init_gap = m2 * math.pi - (m + 1) * math.pi
    init_ok = TowerInterval.point(init_gap).cmp(2 * lattice.alpha[k - 1]) is Ordering.GREATER
    tr1 = trace_samples(lattice, plane, m, 0, k, samples, seed, levels=2)
    tr2 = trace_samples(lattice, plane, m2, 0, k, samples, seed + 1, levels=2)
    W1 = tr1.points[tr1.depth >= 2]
    W2 = tr2.points[tr2.depth >= 2]
    gaps = []
    chain: list[GapCertificate] = []
    for l in range(1, levels + 1):
        s = k + l - 1
        chain.append(gap_step_certificate(lattice, s))
        gaps.append(GapRecord(l, k + l, 2 * lattice.alpha[k + l - 1], list(chain), all(c.ok for c in chain)))
    strip_index = {}
    # level 1: locate the sampled first images; deeper levels via strip certificates
    h1 = tr1.heights[tr1.depth >= 2]
    h2 = tr2.heights[tr2.depth >= 2]
    locs = {lattice.strip_of(_log_to_tower(h - 1e-9, h + 1e-9)).k for h in np.concatenate([h1, h2])}
    strip_index[1] = locs.pop() if len(locs) == 1 else -1
    for l in range(2, levels + 1):
        ok = all(_strip_ok(lattice, s) for s in range(k + 1, k + l))
        strip_index[l] = k + l if ok else -1
    sampled = None
    if h1.size and h2.size:
        a, b = float(h2.min()), float(h1.max())
        sampled = a + math.log(-math.expm1(b - a)) if a > b else -math.inf
    ch = lattice.charts[plane]
    z1 = np.array([ch.inverse(complex(w)) for w in W1])
    z2 = np.array([ch.inverse(complex(w)) for w in W2])
    sep = float(chordal(z1[:, None], z2[None, :]).min()) if z1.size and z2.size else 0.0
    notes = [f"survivors sampled to level 2 ({W1.size}/{samples}, {W2.size}/{samples}); "
             f"levels >= 3 certified by gap and strip certificates"]
    return WanderingPair(k, plane, (m, 0), (m2, 0), init_gap, init_ok, W1, W2, 2, gaps, strip_index, sampled,
                         sep, notes)


# ---------------------------------------------------------------- itinerary avoidance


@dataclass
class AvoidanceCurve:
    q: int  # avoided plane, 1..N
    N: int
    levels: list
    fraction: list  # measure fraction of the root square avoiding plane q through l steps
    kind: list
    rate: float  # fitted geometric rate
    rate_se: float
    D_fit: float
    threshold: float  # D_fit (N-1)/N
    ci_level2: tuple[float, float]

    @property
    def ok(self) -> bool:
        return self.D_fit < self.N / (self.N - 1) and self.rate <= self.threshold + 2 * self.rate_se


def itinerary_avoidance(tree: ItineraryTree, q: int, levels: int = 4, samples: int = 20000,
                        seed: int = 0) -> AvoidanceCurve:
    """Measure fraction of the root square whose first l images avoid plane q (1-based)."""
    L = tree.lattice
    N = L.N
    if not isinstance(q, (int, np.integer)) or not 1 <= q <= N:
        raise UsageError(f"avoided plane must be in 1..{N}")
    if levels < 2:
        raise UsageError("need at least two levels")
    avoid = q - 1
    if tree.root.leftover is None:
        refine(tree, 1)
    # level 1: exact polygon areas of the children landing outside plane q
    a1 = sum(node.area for key, node in tree.nodes.items() if len(key) == 1 and key[0] != avoid) / math.pi ** 2
    tr = tree.trace
    if tr is None or tr.points.size != samples or tr.seed != seed or -2 in tr.labels[:, 1]:
        tr = trace_samples(L, tree.plane, *tree.square, tree.k, samples, seed, levels=2)
        tree.trace = tr
    # level 2: a1 times the sampled conditional share (level-1 sampling noise cancels)
    first = (tr.depth >= 1) & (tr.labels[:, 0] != avoid)
    n1 = int(first.sum())
    c2 = int(np.sum(first & (tr.depth >= 2) & (tr.labels[:, 1] != avoid)))
    ratio = c2 / n1 if n1 else 0.0
    a2 = a1 * ratio
    lo, hi = wilson(c2, n1)
    ci2 = (a1 * lo, a1 * hi)
    fr = [a1, a2]
    kind = ["polygon", "sampled"]
    for l in range(3, levels + 1):
        s = tree.k + l - 1
        fr.append(fr[-1] * (N - 1) / N * (1 - _gap_fraction_upper(L, s)))
        kind.append("modeled")
    ls = np.arange(1, levels + 1, dtype=float)
    w = (ls - ls.mean()) / np.sum((ls - ls.mean()) ** 2)
    with np.errstate(divide="ignore"):
        logs = np.log(np.array(fr))
    slope = float(np.dot(w, logs)) if np.all(np.isfinite(logs)) else -math.inf
    rate = math.exp(slope)
    # a2 noise moves every later modeled point with it
    se_log_a2 = math.sqrt(max(1 - ratio, 0) / max(c2, 1))
    rate_se = rate * abs(float(w[1:].sum())) * se_log_a2
    D = tr.distortion
    return AvoidanceCurve(q, N, list(range(1, levels + 1)), fr, kind, rate, rate_se, D, D * (N - 1) / N, ci2)
