"""Orbit experiments: distances to the post-singular set, omega-limit statistics,
shrinking neighborhoods of the asymptotic values and escape-time pictures."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .aux_charts import PreconditionError
from .function_core import INF, POLE_LOCAL_RADIUS, NevanlinnaFunction, TangentQuotient, chordal, post_singular_set
from .tower_arith import TowerReal, tower_add_bounded, tower_exp
from .tract_models import UPPER, TractSystem

EXCURSION_RADIUS = 1e4
HIT_TOL = 1e-13


# ---------------------------------------------------------------- batch iteration
#
# A point is carried in one of these forms:
#   FINITE      w itself
#   OFFSET      base + e^L with |e^L| tiny (base is an asymptotic value or its image)
#   LARGE       e^L with Re L beyond double range
#   TOWER_POLE  base pole + eps, -log|eps| a TowerReal
#   TOWER_INF   |w| with log|w| a TowerReal
#   INFINITE    exactly infinity (an exact prepole was hit), terminal
#   OVERFLOW    beyond every representable form, terminal
# so that the approach to an asymptotic value is never rounded onto it.
# Past double range the argument of the point is far below resolution; the
# tower forms carry a deterministic surrogate phase instead.

FINITE, OFFSET, LARGE, TOWER_POLE, TOWER_INF, INFINITE, OVERFLOW = range(7)
TAIL_HEIGHT = 12.0
OFFSET_KEEP = 1e-8
LARGE_LOG = 690.0
EXP_LIMIT = 709.0


@dataclass
class BatchState:
    kind: np.ndarray
    w: np.ndarray
    L: np.ndarray  # log offset (OFFSET), log value (LARGE), surrogate phase in .imag (towers)
    T: np.ndarray  # TowerReal magnitudes for the tower forms, else None

    @classmethod
    def start(cls, z) -> "BatchState":
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return cls(np.zeros(z.size, dtype=np.int8), z.copy(), np.zeros(z.size, dtype=complex),
                   np.full(z.size, None, dtype=object))

    def display(self) -> np.ndarray:
        """Representative complex values (infinity for LARGE and beyond)."""
        out = self.w.copy()
        off = self.kind == OFFSET
        with np.errstate(all="ignore"):
            out[off] = self.w[off] + np.exp(self.L[off])
        out[(self.kind >= LARGE) & (self.kind != TOWER_POLE)] = INF
        return out

    def log_modulus(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = np.log(np.abs(self.display()))
        big = self.kind == LARGE
        out[big] = self.L[big].real
        out[(self.kind >= TOWER_INF)] = np.inf
        return out


def _tail(f: NevanlinnaFunction):
    """Exact deviation of f from its asymptotic value high in a tangent tract, or None."""
    if not isinstance(f.quotient, TangentQuotient):
        return None
    m = f.outer
    a, b, c, d = (complex(v) for v in (m.a, m.b, m.c, m.d))
    det = a * d - b * c

    def tail(z: np.ndarray):
        up = z.imag > 0
        g0 = np.where(up, 1j, -1j)
        # tan z - i = -2i q/(1+q), q = e^{2iz};  tan z + i = 2i p/(1+p), p = e^{-2iz}
        logq = np.where(up, 2j * z, -2j * z)
        with np.errstate(all="ignore"):
            logdelta = np.where(up, np.log(-2j), np.log(2j)) + logq - np.log1p(np.exp(logq))
            base = (a * g0 + b) / (c * g0 + d)
            delta = np.exp(logdelta)
            L = np.log(det) + logdelta - np.log(c * g0 + d) - np.log(c * (g0 + delta) + d)
        return base, L

    return tail


def _surrogate_phase(t: TowerReal) -> float:
    # equidistributed in the depth, which grows by one every other step
    frac = math.fmod(math.log(max(abs(t.mantissa), 1.0)) * 1e6 + 0.6180339887498949 * t.depth, 1.0)
    return 2 * math.pi * frac


def _log_wrap(L: np.ndarray) -> np.ndarray:
    return L.real + 1j * np.angle(np.exp(1j * L.imag))


class Stepper:
    """Vectorized application of f to BatchState."""

    def __init__(self, f: NevanlinnaFunction):
        self.f = f
        self.poles = np.array(f.poles(), dtype=complex)
        self.tail = _tail(f)
        self._data = {}
        self._res_cache = {}
        self._base_cache = {}

    def _pole_index(self, v: np.ndarray, radius: float):
        if not self.poles.size:
            return np.full(v.shape, -1), np.full(v.shape, np.inf)
        d = np.abs(v[:, None] - self.poles[None, :])
        idx = np.argmin(d, axis=1)
        dist = d[np.arange(v.size), idx]
        return np.where(dist < radius, idx, -1), dist

    def _pole_coeffs(self, p: int):
        if p not in self._data:
            pd = self.f.pole_data(p)
            self._data[p] = (pd.residue, complex(pd.laurent[0]))
        return self._data[p]

    def _finite_values(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(v.shape, dtype=complex)
        idx, dist = self._pole_index(v, POLE_LOCAL_RADIUS)
        near = idx >= 0
        for p in np.unique(idx[near]):
            sel = idx == p
            out[sel] = self.f.pole_local(int(p), v[sel] - self.poles[p])
        with np.errstate(all="ignore"):
            out[~near] = np.asarray(self.f(v[~near]), dtype=complex)
        return out

    def __call__(self, s: BatchState) -> BatchState:
        n = s.kind.size
        kind = np.full(n, INFINITE, dtype=np.int8)
        w = np.full(n, INF)
        L = np.zeros(n, dtype=complex)
        T = np.full(n, None, dtype=object)
        kind[s.kind == OVERFLOW] = OVERFLOW

        # finite points
        fin = np.flatnonzero(s.kind == FINITE)
        if fin.size:
            v = s.w[fin]
            hit = np.zeros(v.size, dtype=bool)
            if self.poles.size:
                idx, dist = self._pole_index(v, np.inf)
                hit = dist <= 4 * np.finfo(float).eps * (1 + np.abs(self.poles[idx]))
            tail = np.zeros(v.size, dtype=bool)
            if self.tail is not None:
                tail = ~hit & (np.abs(v.imag) > TAIL_HEIGHT)
            rest = ~hit & ~tail
            if tail.any():
                base, Lt = self.tail(v[tail])
                sub = fin[tail]
                kind[sub], w[sub], L[sub] = OFFSET, base, Lt
            if rest.any():
                vals = self._finite_values(v[rest])
                sub = fin[rest]
                good = np.isfinite(vals)
                kind[sub[good]], w[sub[good]] = FINITE, vals[good]

        # offsets from a base point
        off = np.flatnonzero(s.kind == OFFSET)
        if off.size:
            b, Lb = s.w[off], s.L[off]
            idx, _ = self._pole_index(b, 1e-12)
            at_pole = idx >= 0
            for p in np.unique(idx[at_pole]):
                sel = np.flatnonzero(idx == p)
                res, a0 = self._pole_coeffs(int(p))
                Lw = _log_wrap(np.log(res) - Lb[sel])
                exact = ~np.isfinite(Lw.real)  # zero offset: the pole itself
                kind[off[sel[exact]]] = INFINITE
                sel, Lw = sel[~exact], Lw[~exact]
                small = Lw.real < LARGE_LOG
                with np.errstate(all="ignore"):
                    vals = np.exp(Lw[small]) + a0
                kind[off[sel[small]]], w[off[sel[small]]] = FINITE, vals
                kind[off[sel[~small]]], L[off[sel[~small]]] = LARGE, Lw[~small]
            if (~at_pole).any():
                sel = np.flatnonzero(~at_pole)
                nb = self._finite_values(b[sel])
                with np.errstate(all="ignore"):
                    dnb = np.asarray(self.f.derivative(b[sel]), dtype=complex)
                    nL = _log_wrap(Lb[sel] + np.log(dnb))
                keep = np.isfinite(nb) & (nL.real < np.log(OFFSET_KEEP * (1 + np.abs(nb))))
                tgt = off[sel]
                kind[tgt[keep]], w[tgt[keep]], L[tgt[keep]] = OFFSET, nb[keep], nL[keep]
                # offset grew out of the linear regime: evaluate directly
                direct = ~keep
                if direct.any():
                    with np.errstate(all="ignore"):
                        pts = b[sel][direct] + np.exp(Lb[sel][direct])
                    vals = self._finite_values(pts)
                    good = np.isfinite(vals)
                    kind[tgt[direct][good]], w[tgt[direct][good]] = FINITE, vals[good]

        # huge values: only the tangent tail formula applies
        big = np.flatnonzero(s.kind == LARGE)
        if big.size:
            Lv = s.L[big]
            ok = (Lv.real < EXP_LIMIT) & (self.tail is not None)
            for i in big[~ok]:
                self._enter_tower(i, s.L[i].real, s.L[i].imag, kind, w, L, T)
            if ok.any():
                r = np.exp(Lv[ok].real)
                th = Lv[ok].imag
                # the phase of Re z is far below resolution here; it is kept deterministic
                z = np.fmod(r * np.cos(th), np.pi) + 1j * r * np.sin(th)
                with np.errstate(all="ignore"):
                    base, Lt = self.tail(z)
                good = np.isfinite(Lt.real)
                tgt = big[ok]
                kind[tgt[good]], w[tgt[good]], L[tgt[good]] = OFFSET, base[good], Lt[good]
                kind[tgt[~good]] = OVERFLOW

        tp = np.flatnonzero(s.kind == TOWER_POLE)
        if tp.size:
            for i in tp:
                res = self._residue_at(s.w[i])
                t = s.T[i]
                T[i] = t if t.depth >= 2 else tower_add_bounded(t, math.log(abs(res)))
                L[i] = 1j * ((cmath.phase(res) - s.L[i].imag) % (2 * math.pi))
            kind[tp], w[tp] = TOWER_INF, INF
        for i in np.flatnonzero(s.kind == TOWER_INF):
            self._enter_tower(i, s.T[i], s.L[i].imag, kind, w, L, T)
        return BatchState(kind, w, L, T)

    def _residue_at(self, b: complex) -> complex:
        key = complex(b)
        if key not in self._res_cache:
            idx, _ = self._pole_index(np.array([b]), 1e-12)
            self._res_cache[key] = self._pole_coeffs(int(idx[0]))[0] if idx[0] >= 0 else None
        return self._res_cache[key]

    def _tower_base(self, side: float):
        if side not in self._base_cache:
            base, _ = self.tail(np.array([side * 30.0j]))
            b = complex(base[0])
            self._base_cache[side] = b if self._residue_at(b) is not None else None
        return self._base_cache[side]

    def _enter_tower(self, i, logmod, theta, kind, w, L, T):
        """|w| = exp(logmod) with arg theta, far beyond double range, sent near a pole."""
        if self.tail is None or not (isinstance(logmod, TowerReal) or math.isfinite(logmod)):
            kind[i] = OVERFLOW
            return
        # f(w) = base + eps with -log|eps| = 2|Im w| + O(1) = 2 e^logmod |sin theta|
        sn = math.sin(theta)
        base = self._tower_base(1.0 if sn >= 0 else -1.0)
        if base is None:
            kind[i] = OVERFLOW
            return
        try:
            mag = tower_exp(logmod)
            if mag.depth < 2:
                mag = tower_add_bounded(mag, math.log(2 * max(abs(sn), 1e-300)))
        except OverflowError:
            kind[i] = OVERFLOW
            return
        kind[i], w[i], T[i] = TOWER_POLE, base, mag
        L[i] = 1j * _surrogate_phase(mag)


@dataclass
class OrbitBatch:
    kind: np.ndarray  # (n_max + 1, M)
    values: np.ndarray  # display values; INF for LARGE and beyond
    log_modulus: np.ndarray
    near_pole: np.ndarray  # step n lies in a pole neighborhood (so step n + 1 may be large)


def iterate_batch(f: NevanlinnaFunction, z0, n_max: int) -> OrbitBatch:
    """Trajectories of all seeds; shape (n_max + 1, len(z0))."""
    st = Stepper(f)
    s = BatchState.start(z0)
    M = s.kind.size
    kind = np.empty((n_max + 1, M), dtype=np.int8)
    vals = np.empty((n_max + 1, M), dtype=complex)
    logm = np.empty((n_max + 1, M))
    near = np.zeros((n_max + 1, M), dtype=bool)
    for n in range(n_max + 1):
        kind[n], vals[n], logm[n] = s.kind, s.display(), s.log_modulus()
        near[n] = _pole_proximity(st, s)
        if n < n_max:
            s = st(s)
    return OrbitBatch(kind, vals, logm, near)


def _pole_proximity(st: Stepper, s: BatchState, radius: float = 1e-2) -> np.ndarray:
    out = np.zeros(s.kind.size, dtype=bool)
    out[s.kind == TOWER_POLE] = True
    mask = (s.kind == FINITE) | (s.kind == OFFSET)
    if mask.any() and st.poles.size:
        v = s.w[mask]
        idx, _ = st._pole_index(v, radius)
        hit = idx >= 0
        far = np.flatnonzero(~hit & (np.abs(v) > st.f.pole_radius))
        for i in far:
            hit[i] = st.f.nearest_pole(complex(v[i]), tol=radius) is not None
        out[np.flatnonzero(mask)] = hit
    return out


def distances_to(points: list[complex], values: np.ndarray) -> np.ndarray:
    """Chordal distances, shape (*values.shape, len(points))."""
    return np.stack([chordal(values, p) for p in points], axis=-1)


# ---------------------------------------------------------------- single orbits


@dataclass
class OrbitRecord:
    seed: complex
    trajectory: np.ndarray  # INF for infinity and for values beyond double range
    kind: np.ndarray  # FINITE, OFFSET, LARGE, INFINITE or OVERFLOW per step
    log_modulus: np.ndarray
    distance: np.ndarray  # d(f^n z, P_f)
    nearest: np.ndarray  # index into targets of the closest element
    targets: list
    pole_hits: list  # steps n with f^n z exactly infinity
    excursions: list  # (n, log|f^n z|, previous step near a pole)
    terminated: str  # "prepole", "overflow" or "length"

    @property
    def steps(self) -> int:
        return self.trajectory.size - 1

    def omega_estimate(self, tol: float = 0.05, min_approaches: int = 3) -> list[int]:
        """Targets approached at least min_approaches times in the final half."""
        tail = slice(self.steps // 2, None)
        hits = (self.distance[tail] < tol)
        near = self.nearest[tail]
        return [q for q in range(len(self.targets)) if int(np.sum(hits & (near == q))) >= min_approaches]

    def csv_rows(self) -> list[list]:
        rows = []
        for n in range(self.trajectory.size):
            v = self.trajectory[n]
            rows.append([n, KIND_NAMES[int(self.kind[n])], _fmt(v.real), _fmt(v.imag), _fmt(self.log_modulus[n]),
                         _fmt(self.distance[n]), int(self.nearest[n])])
        return rows


KIND_NAMES = {FINITE: "finite", OFFSET: "offset", LARGE: "large", TOWER_POLE: "tower_pole",
              TOWER_INF: "tower_infinity", INFINITE: "infinity", OVERFLOW: "overflow"}
CSV_HEADER = ["n", "form", "re", "im", "log_modulus", "distance", "nearest"]


def _fmt(x: float) -> str:
    return repr(float(x))


def post_singular_points(f: NevanlinnaFunction) -> list[complex]:
    return post_singular_set(f).points()


def _excursions(batch: OrbitBatch, col: int, upto: int) -> list:
    out = []
    lm = batch.log_modulus[: upto + 1, col]
    kind = batch.kind[: upto + 1, col]
    for n in np.flatnonzero((lm > math.log(EXCURSION_RADIUS)) & (kind < INFINITE)):
        near = n > 0 and bool(batch.near_pole[n - 1, col])
        out.append((int(n), float(lm[n]), near))
    return out


def orbit(f: NevanlinnaFunction, z: complex, n_max: int = 200, targets: list | None = None) -> OrbitRecord:
    """Orbit of z, stopped at the first exact visit to infinity or when the log range is exceeded."""
    if not cmath.isfinite(complex(z)):
        raise PreconditionError("orbit needs a finite seed")
    targets = post_singular_points(f) if targets is None else list(targets)
    batch = iterate_batch(f, [complex(z)], n_max)
    kind = batch.kind[:, 0]
    stops = np.flatnonzero(kind >= INFINITE)
    end = int(stops[0]) if stops.size else n_max
    traj = batch.values[: end + 1, 0]
    D = distances_to(targets, traj)
    status = "length"
    if stops.size:
        status = "prepole" if kind[end] == INFINITE else "overflow"
    return OrbitRecord(complex(z), traj, kind[: end + 1].copy(), batch.log_modulus[: end + 1, 0].copy(),
                       D.min(axis=-1), D.argmin(axis=-1), targets,
                       [end] if status == "prepole" else [], _excursions(batch, 0, end), status)


# ---------------------------------------------------------------- omega statistics


@dataclass
class OmegaReport:
    seeds: int
    n_max: int
    tol: float
    min_approaches: int
    early_steps: int
    targets: list
    early_fraction: float  # seeds with min_{n <= early} d(f^n z, P_f) < tol
    full_fraction: float  # seeds approaching every target >= min_approaches times in the final half
    full_ci: tuple
    per_target_fraction: list
    terminated: int  # seeds that reached infinity exactly
    overflowed: int
    excursions: int
    excursions_after_pole: int
    tol_sensitivity: dict = field(default_factory=dict)  # tol -> full fraction
    cutoff_sensitivity: dict = field(default_factory=dict)  # min_approaches -> full fraction


def random_seeds(count: int, half_width: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.uniform(-half_width, half_width, (2, count))
    return u[0] + 1j * u[1]


def omega_stats(f: NevanlinnaFunction, count: int = 1000, half_width: float = 2.0, n_max: int = 1000,
                tol: float = 0.05, min_approaches: int = 3, early_steps: int = 200, seed: int = 0,
                targets: list | None = None) -> OmegaReport:
    """Empirical omega-limit statistics over random seeds in [-w, w]^2.

    Without ``targets`` the post-singular set of f is used (and must consist of
    prepoles); a control map is compared against explicit targets.
    """
    from .wandering_lab import wilson
    targets = post_singular_points(f) if targets is None else list(targets)
    Z = random_seeds(count, half_width, seed)
    batch = iterate_batch(f, Z, n_max)
    D = distances_to(targets, batch.values)  # (n, seeds, targets)
    early = D[: early_steps + 1].min(axis=(0, 2))
    early_frac = float(np.mean(early < tol))
    tail = D[n_max // 2:]
    final = batch.kind[-1]
    alive = final < INFINITE

    def full(t, c):
        counts = np.sum(tail < t, axis=0)  # (seeds, targets)
        return (np.all(counts >= c, axis=1) & alive), counts

    ok, counts = full(tol, min_approaches)
    per_target = [float(np.mean((counts[:, q] >= min_approaches) & alive)) for q in range(len(targets))]
    n_ok = int(ok.sum())
    sens_tol = {t: float(np.mean(full(t, min_approaches)[0])) for t in (tol, tol / 2, tol / 4, tol / 8)}
    sens_cut = {c: float(np.mean(full(tol, c)[0])) for c in (1, min_approaches, 10)}
    big = (batch.log_modulus > math.log(EXCURSION_RADIUS)) & (batch.kind < INFINITE)
    big[0] = False
    after = big[1:] & batch.near_pole[:-1]
    return OmegaReport(count, n_max, tol, min_approaches, early_steps, targets, early_frac, n_ok / count,
                       wilson(n_ok, count), per_target, int(np.sum(final == INFINITE)),
                       int(np.sum(final == OVERFLOW)), int(big.sum()), int(after.sum()), sens_tol, sens_cut)


# ---------------------------------------------------------------- shrinking neighborhoods


@dataclass
class ShrinkageRow:
    height: float
    step: int  # j: neighborhood of f^j(lambda)
    center: complex
    log_radius: float  # log of the inscribed radius (chordal when center is infinity)
    metric: str
    koebe_ratio: float | None = None  # radius / (|g'(0)| e^{-2 height}) for step 0


@dataclass
class ShrinkageTable:
    plane: int
    lam: complex
    order: int
    rows: list

    def radii(self, step: int) -> list[float]:
        return [r.log_radius for r in self.rows if r.step == step]

    def decreasing(self) -> bool:
        steps = sorted({r.step for r in self.rows})
        return all(np.all(np.diff(self.radii(s)) < 0) for s in steps)


def alpha_heights(alpha0: float, N: int, k_range) -> list[float]:
    """alpha_k for k in k_range; every one must be a float."""
    from .tower_arith import AlphaTable
    A = AlphaTable(N, alpha0)
    out = []
    for k in k_range:
        if k < 0:
            raise PreconditionError("k must be >= 0")
        a = A.float_value(k)
        if not math.isfinite(a) or a > 5e4:
            raise PreconditionError(f"alpha_{k} is beyond the machine-representable range")
        out.append(a)
    return out


def neighborhood_shrinkage(system: TractSystem, k_range=None, alpha0: float = 3.0, plane: int = 0,
                           heights=None, samples: int = 96, extra_dps: int = 25) -> ShrinkageTable:
    """Inscribed radii of f^j(f({Im Z_plane > h})) about f^j(lambda) for j = 0..order.

    Heights are alpha_k for k in ``k_range`` unless given directly.  The last
    step is a neighborhood of infinity, measured chordally.
    """
    f = system.f
    if heights is None:
        heights = alpha_heights(alpha0, f.N, range(2) if k_range is None else k_range)
    heights = [float(h) for h in heights]
    if any(h < alpha0 for h in heights):
        raise PreconditionError("heights must be at least alpha0")
    if not f.quotient.has_mp:
        raise PreconditionError("needs a high-precision backend")
    chart = system.charts[plane]
    model = system.model(plane, UPPER)
    order = model.k
    rows = []
    for h in heights:
        dps = int(2 * h / math.log(10)) + extra_dps
        with mpmath.workdps(dps):
            x = [mpmath.pi * (t + 0.5) / samples for t in range(samples)]
            # lambda itself: f far up the tract, where e^{-2H} is below the working precision
            H = dps * math.log(10) / 2 + 10
            lam = f.mp_value(chart.inverse_mp(mpmath.mpc(0, H), seed=chart.inverse(complex(0, min(H, 300.0)))), dps)
            ring = []
            for xv in x:
                Z = mpmath.mpc(xv, h)
                z = chart.inverse_mp(Z, seed=chart.inverse(complex(float(xv), h)))
                ring.append(f.mp_value(z, dps))
            center = lam
            for j in range(order + 1):
                if j == order:
                    d = min(2 / mpmath.sqrt(1 + abs(w) ** 2) for w in ring)
                    rows.append(ShrinkageRow(h, j, INF, float(mpmath.log(d)), "chordal"))
                    break
                d = min(abs(w - center) for w in ring)
                ratio = None
                if j == 0:
                    g0 = abs(complex(model.offset(1e-30)) / 1e-30)  # |M'(0)|
                    ratio = float(d / (g0 * mpmath.exp(-2 * h)))
                rows.append(ShrinkageRow(h, j, complex(center), float(mpmath.log(d)), "euclidean", ratio))
                ring = [f.mp_value(w, dps) for w in ring]
                center = f.mp_value(center, dps)
    return ShrinkageTable(plane, complex(model.lam), order, rows)


# ---------------------------------------------------------------- rendering


@dataclass
class Rendering:
    width: int
    height: int
    window: tuple
    classes: np.ndarray  # 0 pole-proximity escape, 1 settled (attracting basin), 2 undecided
    escape_time: np.ndarray
    distance: np.ndarray  # final-half minimum distance to the targets
    pixels: bytes  # RGB rows, top row first

    @property
    def basin_fraction(self) -> float:
        return float(np.mean(self.classes == 1))

    def ppm(self) -> bytes:
        return f"P6\n{self.width} {self.height}\n255\n".encode() + self.pixels


def render(f: NevanlinnaFunction, window=(-3.0, 3.0, -3.0, 3.0), resolution=(200, 200), n_max: int = 100,
           targets: list | None = None, escape_radius: float = 1e6) -> Rendering:
    """Per-pixel classification by iterating pixel centers (rows from the top of the window)."""
    x0, x1, y0, y1 = (float(v) for v in window)
    if not all(math.isfinite(v) for v in window) or x1 <= x0 or y1 <= y0:
        raise PreconditionError("window must be a finite nonempty box")
    W, H = (int(v) for v in resolution)
    xs = x0 + (np.arange(W) + 0.5) * (x1 - x0) / W
    ys = y1 - (np.arange(H) + 0.5) * (y1 - y0) / H
    Z = (xs[None, :] + 1j * ys[:, None]).ravel()
    if targets is None:
        try:
            targets = post_singular_points(f)
        except Exception:
            targets = [INF]
    batch = iterate_batch(f, Z, n_max)
    traj = batch.values
    big = batch.log_modulus > math.log(escape_radius)
    esc = np.where(big.any(axis=0), big.argmax(axis=0), n_max + 1)
    tail = traj[n_max // 2:]
    with np.errstate(invalid="ignore"):
        steps = np.abs(np.diff(tail, axis=0))
    settled = np.all(np.isfinite(tail), axis=0) & np.all(steps < 0.05, axis=0)
    cls = np.where(settled, 1, np.where(esc <= n_max, 0, 2)).astype(np.uint8)
    D = distances_to(targets, tail).min(axis=(0, 2))
    shade = (255 * (1 - np.minimum(D, 1.0))).astype(np.uint8)
    t = (255 * (1 - np.minimum(esc, n_max) / n_max)).astype(np.uint8)
    rgb = np.zeros((Z.size, 3), dtype=np.uint8)
    rgb[cls == 0] = np.stack([t, shade // 2, 255 - t], axis=1)[cls == 0]
    rgb[cls == 1] = np.stack([np.zeros_like(t), shade, np.zeros_like(t) + 64], axis=1)[cls == 1]
    rgb[cls == 2] = np.stack([shade, shade, shade], axis=1)[cls == 2]
    return Rendering(W, H, (x0, x1, y0, y1), cls.reshape(H, W), esc.reshape(H, W), D.reshape(H, W),
                     rgb.tobytes())
