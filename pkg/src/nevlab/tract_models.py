"""Exponential-Mobius models of f on asymptotic tracts and the return maps Phi.

On the upper tract of chart i, f = M(xi) with xi = exp(2i Z_i) and
M(xi) = (A xi + B)/(C xi + D).  On the lower tract xi = exp(-2i Z_i) and
M(xi) = (A + B xi)/(C + D xi).  Internally each side stores a single Mobius
map ``mob`` in the variable xi, so both sides share the same code.

h(xi) = 1/f^k(M(xi)) vanishes at 0.  Near 0 it is evaluated from a Taylor
series of G = 1/f^k about the asymptotic value, composed with the exact
offset M(xi) - lambda = xi det/(s (r xi + s)); this keeps full relative
precision for arbitrarily small xi.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .aux_charts import AuxChart, PreconditionError, SectorFrame, build_charts, critical_rays
from .function_core import (
    INF,
    POLE_LOCAL_RADIUS,
    Mobius,
    NevanlinnaFunction,
    PostSingularSet,
    post_singular_set,
)

UPPER, LOWER = "U", "L"


class DegenerateFit(ArithmeticError):
    pass


class NoAdmissibleThreshold(ArithmeticError):
    pass


class OverflowRegime(OverflowError):
    """Raised when a value must be handled by the tower engine instead."""


class OrbitChainError(ArithmeticError):
    pass


# ---------------------------------------------------------------- helpers


def iterate_near(f: NevanlinnaFunction, w: complex, steps: int) -> complex:
    """f^steps(w); the last step uses the Laurent expansion if w sits near a cataloged pole."""
    for s in range(steps):
        w = complex(w)
        if not cmath.isfinite(w):
            return INF
        poles = f.poles()
        if poles:
            idx = int(np.argmin([abs(p - w) for p in poles]))
            d = w - poles[idx]
            if abs(d) < POLE_LOCAL_RADIUS:
                w = complex(f.pole_local(idx, d)) if d != 0 else INF
                continue
        w = complex(f(w))
    return w


def orbit_derivative(f: NevanlinnaFunction, w: complex, steps: int) -> complex:
    """(f^steps)'(w) by the chain rule."""
    d = 1.0 + 0j
    for _ in range(steps):
        d *= complex(f.derivative(w))
        w = complex(f(w))
    return d


def koebe_T(eta: float) -> float:
    """(1+eta)^4/(1-eta)^4: bound on |g'(z)|/|g'(w)| for z, w in the eta-subdisk."""
    if not 0 <= eta < 1:
        raise ValueError("eta must lie in [0, 1)")
    return ((1 + eta) / (1 - eta)) ** 4


def koebe_growth_bounds(hprime0: complex, xi_abs: float, r: float) -> tuple[float, float]:
    """Koebe growth bounds for |h(xi)|, h univalent on D(0, r), h(0) = 0."""
    rho = xi_abs / r
    if rho >= 1:
        raise PreconditionError("|xi| must be below the univalence radius")
    return abs(hprime0) * xi_abs / (1 + rho) ** 2, abs(hprime0) * xi_abs / (1 - rho) ** 2


@dataclass
class UnivalenceReport:
    ok: bool
    radius: float
    winding_h: int
    winding_dh: int
    min_abs_dh: float
    reason: str = ""


def univalence_check(h: Callable, dh: Callable, r: float, grid: int = 64) -> UnivalenceReport:
    """h' nonzero on a polar grid, h' zero-free inside (argument principle), h winds once.

    A numerical certificate, not a proof.
    """
    ang = 2 * math.pi * np.arange(grid) / grid
    rad = r * (np.arange(1, grid + 1) / grid)
    pts = (rad[:, None] * np.exp(1j * ang[None, :])).ravel()
    d = np.array([dh(p) for p in pts])
    d0 = abs(dh(0.0))
    circle = r * np.exp(2j * math.pi * np.arange(512) / 512)
    hv = np.array([h(p) for p in circle])
    dv = np.array([dh(p) for p in circle])

    def winding(v):
        if np.any(~np.isfinite(v)) or np.any(v == 0):
            return -999
        inc = np.angle(np.roll(v, -1) / v)
        return int(round(float(np.sum(inc)) / (2 * math.pi)))

    wh, wd = winding(hv), winding(dv)
    mind = float(np.min(np.abs(d))) if np.all(np.isfinite(d)) else 0.0
    reasons = []
    if wh != 1:
        reasons.append(f"h winds {wh} times")
    if wd != 0:
        reasons.append(f"h' has {wd} zeros inside")
    if not mind > 1e-10 * d0:
        reasons.append("h' vanishes on the grid")
    return UnivalenceReport(not reasons, r, wh, wd, mind, "; ".join(reasons))


# ---------------------------------------------------------------- model


@dataclass
class TractModel:
    index: int
    side: str
    mob: Mobius  # f ~ mob(xi) on the tract
    lam: complex
    k: int
    c: float
    f: NevanlinnaFunction = field(repr=False)
    chart: AuxChart = field(repr=False)
    residual: float = 0.0
    residual_by_height: dict = field(default_factory=dict)
    taylor: np.ndarray = field(default=None, repr=False)
    taylor_radius: float = 0.0
    hprime0: complex = 0j
    hprime0_checks: dict = field(default_factory=dict)
    lam_fit: complex = 0j  # B/D of the unconstrained fit
    free_fit: Mobius | None = field(default=None, repr=False)
    free_residual: float = 0.0
    free_residual_by_height: dict = field(default_factory=dict)

    @property
    def r(self) -> float:
        return math.exp(-2 * self.c)

    @property
    def m(self) -> float:
        return 1.0 / abs(self.hprime0)

    @property
    def coefficients(self) -> tuple[complex, complex, complex, complex]:
        """(A, B, C, D) in the form F = (A e^{iZ} + B e^{-iZ})/(C e^{iZ} + D e^{-iZ})."""
        p, q, r, s = (complex(v) for v in (self.mob.a, self.mob.b, self.mob.c, self.mob.d))
        return (p, q, r, s) if self.side == UPPER else (q, p, s, r)

    def xi(self, Z):
        Z = np.asarray(Z, dtype=complex)
        return np.exp(2j * Z) if self.side == UPPER else np.exp(-2j * Z)

    def height(self, Z):
        """Distance into the tract: Im Z (upper) or -Im Z (lower)."""
        Z = np.asarray(Z, dtype=complex)
        return Z.imag if self.side == UPPER else -Z.imag

    def model_value(self, Z):
        return self.mob(self.xi(Z))

    def offset(self, xi):
        """M(xi) - lambda without cancellation."""
        p, q, r, s = (complex(v) for v in (self.mob.a, self.mob.b, self.mob.c, self.mob.d))
        return xi * (p * s - q * r) / (s * (r * xi + s))

    # --- h
    def _series_ok(self, delta) -> bool:
        return abs(delta) < 0.5 * self.taylor_radius

    def h(self, xi: complex) -> complex:
        xi = complex(xi)
        delta = self.offset(xi)
        if self._series_ok(delta):
            return complex(np.polynomial.polynomial.polyval(delta, self.taylor))
        w = complex(self.mob(xi))
        v = iterate_near(self.f, w, self.k)
        return 0j if not cmath.isfinite(v) else 1.0 / v

    def h_derivative(self, xi: complex) -> complex:
        xi = complex(xi)
        p, q, r, s = (complex(v) for v in (self.mob.a, self.mob.b, self.mob.c, self.mob.d))
        dM = (p * s - q * r) / (r * xi + s) ** 2
        delta = self.offset(xi)
        if self._series_ok(delta):
            dG = np.polynomial.polynomial.polyval(delta, np.polynomial.polynomial.polyder(self.taylor))
            return complex(dG * dM)
        w = complex(self.mob(xi))
        inner = iterate_near(self.f, w, self.k - 1)
        d_inner = orbit_derivative(self.f, w, self.k - 1)
        fv = complex(self.f(inner))
        # (1/f)'(inner) = -f'/f^2, stable near a pole through 1/f
        g = 1.0 / fv
        return complex(-self.f.derivative(inner) * g * g * d_inner * dM)

    def u_deviation(self, xi):
        """u with h(xi) = h'(0) xi (1 + u), computed without cancellation (series regime)."""
        xi = np.asarray(xi, dtype=complex)
        p, q, r, s = (complex(v) for v in (self.mob.a, self.mob.b, self.mob.c, self.mob.d))
        delta = self.offset(xi)
        a = self.taylor
        tail = np.polynomial.polynomial.polyval(delta, a[2:] / a[1]) * delta
        e = r * xi / s
        return (tail - e) / (1 + e)

    # --- Phi
    def phi_from_Z(self, Z: complex) -> complex:
        """I o h o E at a chart value Z."""
        if self.height(Z) > 350:
            raise OverflowRegime("Im Z too large for floating point; use the tower engine")
        if self.height(Z) <= self.c:
            raise PreconditionError("Z is not in the tract (height <= c)")
        return 1.0 / self.h(complex(self.xi(Z)))

    def log_phi_from_Z(self, Z: complex) -> complex:
        """log Phi = -log h'(0) - log xi - log(1 + u), valid for any height > c."""
        Z = complex(Z)
        if self.height(Z) <= self.c:
            raise PreconditionError("Z is not in the tract (height <= c)")
        log_xi = 2j * Z if self.side == UPPER else -2j * Z
        xi = cmath.exp(log_xi) if log_xi.real > -700 else 0j
        if xi != 0 and not self._series_ok(self.offset(xi)):
            return -cmath.log(self.h(xi))
        u = complex(self.u_deviation(xi))
        return -cmath.log(self.hprime0) - log_xi - _clog1p(u)

    def log_modulus_deviation(self, Z: complex) -> float:
        """log|Phi| - log(m e^{2y}), free of the cancellation in subtracting 2y."""
        Z = complex(Z)
        log_xi = 2j * Z if self.side == UPPER else -2j * Z
        xi = cmath.exp(log_xi) if log_xi.real > -700 else 0j
        if xi != 0 and not self._series_ok(self.offset(xi)):
            return self.log_phi_from_Z(Z).real - math.log(self.m) - 2 * float(self.height(Z))
        return -_clog1p(complex(self.u_deviation(xi))).real

    def log_phi_array(self, Z) -> np.ndarray:
        """Vectorized log Phi over an array of chart values (series regime only)."""
        Z = np.asarray(Z, dtype=complex)
        if np.any(self.height(Z) <= self.c):
            raise PreconditionError("Z is not in the tract (height <= c)")
        log_xi = 2j * Z if self.side == UPPER else -2j * Z
        with np.errstate(under="ignore"):
            xi = np.where(log_xi.real > -700, np.exp(log_xi), 0)
        if np.any(np.abs(self.offset(xi)) >= 0.5 * self.taylor_radius):
            return np.vectorize(self.log_phi_from_Z, otypes=[complex])(Z)
        return -cmath.log(self.hprime0) - log_xi - clog1p_array(self.u_deviation(xi))

    def summary(self) -> dict:
        A, B, C, D = self.coefficients
        return {"index": self.index, "side": self.side, "lambda": [self.lam.real, self.lam.imag],
                "k": self.k, "c": self.c, "m": self.m,
                "hprime0": [self.hprime0.real, self.hprime0.imag],
                "A": [A.real, A.imag], "B": [B.real, B.imag], "C": [C.real, C.imag], "D": [D.real, D.imag],
                "lambda_free_fit": [self.lam_fit.real, self.lam_fit.imag],
                "fit_residual": self.residual, "free_fit_residual": self.free_residual,
                "residual_by_height": {f"{k:.3f}": v for k, v in sorted(self.residual_by_height.items())},
                "hprime0_checks": self.hprime0_checks}


def _clog1p(u: complex) -> complex:
    """log(1+u) accurate for small |u|."""
    if abs(u) > 0.5:
        return cmath.log(1 + u)
    re = 0.5 * math.log1p(2 * u.real + abs(u) ** 2)
    im = math.atan2(u.imag, 1 + u.real)
    return complex(re, im)


def clog1p_array(u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    small = np.abs(u) <= 0.5
    re = np.where(small, 0.5 * np.log1p(2 * u.real + np.abs(u) ** 2), np.log(np.abs(1 + u)))
    im = np.arctan2(u.imag, 1 + u.real)
    return re + 1j * im


# ---------------------------------------------------------------- fitting


def _fit_rows(f: NevanlinnaFunction, chart: AuxChart, side: str, c: float, sample_count: int,
              x0: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    heights = np.linspace(c + 1, c + 6, 6)
    per = max(2, int(math.ceil(sample_count / len(heights))))
    xs = x0 + np.linspace(0, math.pi, per, endpoint=False)
    sign = 1 if side == UPPER else -1
    Z = (xs[None, :] + 1j * sign * heights[:, None]).ravel()
    z = chart.inverse(Z)
    if not np.all(chart.frame.in_sector(chart.index, z, tol=1e-9)):
        raise PreconditionError("fit samples fall outside the sector")
    fz = np.asarray(f(z), dtype=complex)
    return Z, fz, np.repeat(heights, per)


def _fit_x0(chart: AuxChart) -> float:
    """Start of the fitting window in Re Z: beyond the radius where Z is asymptotic."""
    if chart.m == 0 and not chart.rho.size:
        return 0.0
    rb = chart.big_radius()
    zb = complex(chart.value(rb * cmath.exp(1j * chart.theta), check=False)).real
    return float(max(0.0, zb))


def fit_mobius(f: NevanlinnaFunction, chart: AuxChart, side: str, c: float, sample_count: int = 48,
               lam: complex | None = None):
    """Homogeneous least squares for (p, q, r, s) in f = (p xi + q)/(r xi + s).

    With ``lam`` given the fit is constrained to q = lam * s, so M(0) = lam exactly.
    """
    if sample_count < 8:
        raise ValueError("need at least 8 samples")
    x0 = _fit_x0(chart)
    Z, fz, hts = _fit_rows(f, chart, side, c, sample_count, x0)
    xi = np.exp(2j * Z) if side == UPPER else np.exp(-2j * Z)
    scale = math.exp(2 * (c + 1))
    xs = xi * scale
    w = (1 + np.abs(fz))[:, None]
    if lam is None:
        rows = np.column_stack([xs, np.ones_like(xs), -fz * xs, -fz]) / w
        p, q, r, s = np.conj(np.linalg.svd(rows)[2][-1])
    else:
        rows = np.column_stack([xs, -fz * xs, lam - fz]) / w
        p, r, s = np.conj(np.linalg.svd(rows)[2][-1])
        q = lam * s
    p, r = p * scale, r * scale
    det = p * s - q * r
    norm = max(abs(p), abs(q), abs(r), abs(s))
    if abs(det) < 1e-12 * norm ** 2 or abs(s) < 1e-14 * norm:
        raise DegenerateFit("fitted Mobius map is degenerate")
    mob = Mobius(p / norm, q / norm, r / norm, s / norm)
    F = mob(xi)
    res = np.abs(fz - F) / (1 + np.abs(fz))
    by_h = {float(h): float(np.max(res[hts == h])) for h in np.unique(hts)}
    return mob, float(np.max(res)), by_h, (Z, fz)


def _taylor_at(f: NevanlinnaFunction, lam: complex, k: int, radius: float = 0.25, M: int = 128):
    """Taylor coefficients of G = 1/f^k at lam from an FFT on a circle; halves the radius until the tail is clean."""
    for _ in range(12):
        t = np.exp(2j * math.pi * np.arange(M) / M)
        vals = np.array([iterate_near(f, lam + radius * w, k) for w in t])
        G = np.where(np.isfinite(vals), 1.0 / np.where(vals == 0, np.nan, vals), 0)
        if np.all(np.isfinite(G)):
            coef = np.fft.fft(G) / M
            scale = np.max(np.abs(coef)) + 1e-300
            tail = np.max(np.abs(coef[M // 2 - 16:M // 2]))
            if tail < 1e-15 * scale and abs(coef[0]) < 1e-10 * scale:
                a = coef[: M // 2] / radius ** np.arange(M // 2)
                a[0] = 0
                return a, radius
        radius /= 2
    raise OrbitChainError(f"no clean Taylor disk for 1/f^{k} at {lam}")


def fit_tract(f: NevanlinnaFunction, chart: AuxChart, side: str, c: float, k: int | None = None,
              sample_count: int = 48, max_residual: float = 1e-6) -> TractModel:
    if side not in (UPPER, LOWER):
        raise ValueError("side must be 'U' or 'L'")
    mob0, res0, by_h0, _ = fit_mobius(f, chart, side, c, sample_count)
    if res0 > max_residual:
        raise DegenerateFit(f"fit residual {res0:.3e} above threshold {max_residual:.1e}")
    lam_fit = complex(mob0.b / mob0.d)
    vals = f.asymptotic_values()
    j = int(np.argmin([abs(v - lam_fit) for v in vals]))
    if abs(vals[j] - lam_fit) > 1e-6 * (1 + abs(vals[j])):
        raise DegenerateFit(f"fitted asymptotic value {lam_fit} matches none of {vals}")
    lam = complex(vals[j])
    if k is None:
        k = post_singular_set(f).prepole_orders[j]
    mob, res, by_h, _ = fit_mobius(f, chart, side, c, sample_count, lam=lam)
    taylor, trad = _taylor_at(f, lam, k)
    model = TractModel(chart.index, side, mob, lam, k, float(c), f, chart, res, by_h, taylor, trad,
                       lam_fit=lam_fit, free_fit=mob0, free_residual=res0, free_residual_by_height=by_h0)
    p, q, r, s = (complex(v) for v in (mob.a, mob.b, mob.c, mob.d))
    q0 = (p * s - q * r) / s ** 2
    model.hprime0 = complex(taylor[1] * q0)
    model.hprime0_checks = _hprime0_checks(model, q0)
    return model


def _hprime0_checks(model: TractModel, q0: complex) -> dict:
    f, lam, k = model.f, model.lam, model.k
    out = {}
    inner = iterate_near(f, lam, k - 1)
    pole = f.nearest_pole(inner, tol=1e-6)
    if pole is not None and pole in f.poles():
        res = f.pole_data(f.poles().index(pole)).residue
        d_inner = orbit_derivative(f, lam, k - 1)
        v = q0 * d_inner / res
        out["residue"] = [v.real, v.imag]
    eps = 1e-3 * model.r

    def D(e):
        return (model.h(e) - model.h(-e)) / (2 * e)

    v = (4 * D(eps / 2) - D(eps)) / 3
    out["richardson"] = [v.real, v.imag]
    return out


def choose_c(f: NevanlinnaFunction, charts: list[AuxChart], start_c: float = 1.0, cap: float = 12.0,
             pss: PostSingularSet | None = None, h_factory: Callable | None = None,
             sample_count: int = 48) -> float:
    """Smallest c on the grid start_c, start_c + 1, ... satisfying both tract conditions.

    ``h_factory(model) -> (h, dh)`` replaces the fitted h in the univalence
    test; used to exercise the search.
    """
    pss = pss or post_singular_set(f)
    c = float(start_c)
    while c <= cap:
        if _admissible(f, charts, c, pss, h_factory, sample_count):
            return c
        c += 1.0
    raise NoAdmissibleThreshold(f"no admissible c up to {cap}")


def in_tract(chart: AuxChart, z, c: float, side: str) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    inside = chart.frame.in_sector(chart.index, z)
    out = np.zeros(z.shape, dtype=bool)
    if np.any(inside):
        Z = chart.value(z[inside], check=False)
        eps = chart.aperture()
        h = Z.imag if side == UPPER else -Z.imag
        out[inside] = (h > c) & (np.abs(np.angle(Z)) < math.pi - eps)
    return out


def _admissible(f, charts, c, pss, h_factory, sample_count) -> bool:
    pts = np.array(pss.finite_points, dtype=complex)
    for ch in charts:
        for side in (UPPER, LOWER):
            if pts.size and np.any(in_tract(ch, pts, c, side)):
                return False
    for ch in charts:
        for side in (UPPER, LOWER):
            try:
                model = fit_tract(f, ch, side, c, sample_count=sample_count)
            except (DegenerateFit, OrbitChainError, PreconditionError):
                return False
            h, dh = h_factory(model) if h_factory else (model.h, model.h_derivative)
            if not univalence_check(h, dh, model.r).ok:
                return False
    return True


# ---------------------------------------------------------------- Phi and bounds


def phi(model: TractModel, z: complex, route_check: bool = False):
    """Phi(z) = f^{k+1}(z) by the factorized route; optionally compared with direct iteration."""
    Z = complex(model.chart.value(z))
    val = model.phi_from_Z(Z)
    if not route_check:
        return val
    direct = iterate_near(model.f, complex(z), model.k + 1)
    if not cmath.isfinite(direct):
        raise OverflowRegime("direct route hit a pole")
    rel = abs(direct - val) / abs(direct)
    return val, direct, rel


@dataclass
class BoundsReport:
    count: int
    violations: list
    min_lower_margin: float
    min_upper_margin: float
    ratio_monotone: bool
    rows: list = field(repr=False, default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def modulus_bounds(m: float, y: float, c: float) -> tuple[float, float]:
    """m (e^{2y} -+ 2 e^{2c} + e^{4c - 2y}) in float (small y only)."""
    lo = m * (math.exp(2 * y) - 2 * math.exp(2 * c) + math.exp(4 * c - 2 * y))
    hi = m * (math.exp(2 * y) + 2 * math.exp(2 * c) + math.exp(4 * c - 2 * y))
    return lo, hi


def verify_modulus_bounds(model: TractModel, Z_samples, alpha0: float | None = None) -> BoundsReport:
    """Check m(e^{2y} - 2e^{2c} + e^{4c-2y}) <= |Phi| <= m(e^{2y} + 2e^{2c} + e^{4c-2y}).

    Both sides are divided by m e^{2y} and compared in log form, so any height works.
    Margins are log-ratios (positive = satisfied).
    """
    Z = np.atleast_1d(np.asarray(Z_samples, dtype=complex))
    y = model.height(Z)
    floor = model.c if alpha0 is None else alpha0
    if np.any(y <= floor):
        raise PreconditionError("samples need height y > alpha0 > c (rho = e^{2c-2y} < 1)")
    rows, viol = [], []
    lo_m, hi_m = math.inf, math.inf
    for Zs, ys in zip(Z, y):
        rho = math.exp(2 * model.c - 2 * ys)
        if ys <= model.c:
            raise PreconditionError("Z is not in the tract (height <= c)")
        dev = model.log_modulus_deviation(complex(Zs))
        lower_margin = dev - 2 * math.log1p(-rho)
        upper_margin = 2 * math.log1p(rho) - dev
        rows.append((complex(Zs), float(ys), float(dev), lower_margin, upper_margin))
        lo_m, hi_m = min(lo_m, lower_margin), min(hi_m, upper_margin)
        if lower_margin < 0 or upper_margin < 0:
            viol.append(rows[-1])
    order = np.argsort(y)
    ratios = [4 * math.atanh(math.exp(2 * model.c - 2 * yy)) for yy in y[order]]  # log(upper/lower)
    mono = all(b <= a + 1e-15 for a, b in zip(ratios, ratios[1:]))
    return BoundsReport(len(rows), viol, lo_m, hi_m, mono, rows)


def tract_samples(model: TractModel, count: int, rng: np.random.Generator, y_min: float, y_max: float,
                  x_width: float = 4 * math.pi) -> np.ndarray:
    """Random chart values in the tract, Re Z in the fitting window."""
    x0 = _fit_x0(model.chart)
    x = x0 + rng.uniform(0, x_width, count)
    y = rng.uniform(y_min, y_max, count)
    sign = 1 if model.side == UPPER else -1
    return x + 1j * sign * y


# ---------------------------------------------------------------- distortion


@dataclass
class DistortionBudget:
    eta: float
    T: float
    C0: float
    B: float

    @property
    def ok(self) -> bool:
        return self.C0 <= self.T and self.B <= self.T


def distortion_budget(model: TractModel, eta: float = 0.5, n: int = 24) -> DistortionBudget:
    """Measured derivative-ratio constants of h on D(0, eta r) against Koebe's T(eta)."""
    rad = model.r * eta * np.sqrt(np.linspace(0, 1, n))
    ang = np.linspace(0, 2 * math.pi, n, endpoint=False)
    pts = (rad[:, None] * np.exp(1j * ang[None, :])).ravel()
    d = np.abs([model.h_derivative(p) for p in pts])
    C0 = float(np.max(d) / np.min(d))
    inv = 1.0 / d  # inverse branch derivative at the image points
    B = float(np.max(inv) / np.min(inv))
    return DistortionBudget(eta, koebe_T(eta), C0, B)


# ---------------------------------------------------------------- system


@dataclass
class TractSystem:
    f: NevanlinnaFunction
    frame: SectorFrame
    charts: list
    pss: PostSingularSet
    c: float
    models: dict  # (index, side) -> TractModel

    @property
    def N(self) -> int:
        return self.frame.N

    def model(self, i: int, side: str = UPPER) -> TractModel:
        return self.models[(i % self.N, side)]

    def m_values(self) -> dict:
        return {f"{i}{s}": mdl.m for (i, s), mdl in sorted(self.models.items())}

    def global_m(self) -> tuple[float, float]:
        vals = [mdl.m for mdl in self.models.values()]
        return min(vals), max(vals)

    def tract_index(self, z: complex) -> tuple[int, str] | None:
        """(chart, side) of a tract containing z, preferring the upper side."""
        for ch in self.charts:
            for side in (UPPER, LOWER):
                if in_tract(ch, z, self.c, side)[0]:
                    return ch.index, side
        return None


def build_system(f: NevanlinnaFunction, eps0: float | None = None, R: float | None = None,
                 c: float | str = "auto", start_c: float = 1.0, sample_count: int = 48) -> TractSystem:
    frame = critical_rays(f.schwarzian, eps0, R)
    charts = [AuxChart(f.schwarzian, frame, i) for i in range(frame.N)]
    pss = post_singular_set(f)
    if c == "auto" or c is None:
        c = choose_c(f, charts, start_c, pss=pss, sample_count=sample_count)
    c = float(c)
    vals = f.asymptotic_values()
    models = {}
    for ch in charts:
        for side in (UPPER, LOWER):
            lam_index = ch.index if side == UPPER else (ch.index - 1) % frame.N
            models[(ch.index, side)] = fit_tract(f, ch, side, c, k=pss.prepole_orders[lam_index],
                                                 sample_count=sample_count)
            got = models[(ch.index, side)].lam
            if abs(got - vals[lam_index]) > 1e-6 * (1 + abs(vals[lam_index])):
                raise DegenerateFit(f"tract ({ch.index},{side}) fitted lambda {got} != {vals[lam_index]}")
    return TractSystem(f, frame, charts, pss, c, models)


__all__ = [
    "UPPER", "LOWER", "TractModel", "TractSystem", "fit_tract", "fit_mobius", "choose_c", "phi",
    "verify_modulus_bounds", "modulus_bounds", "koebe_T", "koebe_growth_bounds", "univalence_check",
    "distortion_budget", "DistortionBudget", "build_system", "build_charts", "in_tract", "tract_samples",
    "DegenerateFit", "NoAdmissibleThreshold", "OverflowRegime", "iterate_near",
]
