"""Critical rays, sectors, and the auxiliary charts Z_i = integral of sqrt(P).

In chart i we rotate by the critical direction, t = z * exp(-i theta_i).
On |z| > R every root of P satisfies |root| < R/2, so

    sqrt(P) dz = sqrt|a| * t**(m/2) * prod_k sqrt(1 - rho_k / t) dt,    m = N - 2,

with rho_k the rotated roots and principal branches throughout.  This
branch is analytic on the whole sector, positive on the critical ray, and
its square is P.  Expanding the product in powers of 1/t gives a
convergent Puiseux antiderivative, which is the default evaluation route.
Adaptive Gauss-Kronrod quadrature along a ray-then-arc path is available
as an independent route.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate

from .function_core import SchwarzianPolynomial


class PreconditionError(ValueError):
    pass


class NewtonDivergence(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


def wrap_angle(x):
    """Reduce angles to (-pi, pi]."""
    return -np.remainder(-np.asarray(x) + math.pi, 2 * math.pi) + math.pi


@dataclass(frozen=True)
class SectorFrame:
    thetas: tuple
    eps0: float
    R: float
    N: int
    leading: complex

    @property
    def half_opening(self) -> float:
        return 2 * math.pi / self.N - self.eps0

    def angle_from_ray(self, i: int, z):
        return wrap_angle(np.angle(z) - self.thetas[i % self.N])

    def in_sector(self, i: int, z, tol: float = 1e-12):
        z = np.asarray(z)
        return (np.abs(self.angle_from_ray(i, z)) <= self.half_opening + tol) & (np.abs(z) > self.R)

    def in_wedge(self, i: int, z):
        return np.abs(self.angle_from_ray(i, z)) <= self.eps0

    def boundary_rays(self, i: int) -> tuple[float, float]:
        th = self.thetas[i % self.N]
        return th - self.half_opening, th + self.half_opening

    def in_overlap(self, i: int, z):
        return self.in_sector(i, z) & self.in_sector(i + 1, z)


def critical_rays(P: SchwarzianPolynomial, eps0: float | None = None, R: float | None = None) -> SectorFrame:
    """Directions theta with arg a + N theta = 0 (mod 2 pi), sorted in [0, 2 pi)."""
    N = P.order
    a = P.leading
    if eps0 is None:
        eps0 = math.pi / (8 * N)
    if not 0 < eps0 < math.pi / N:
        raise ValueError("eps0 must lie in (0, pi/N)")
    roots = P.roots()
    if R is None:
        R = 2 * (1 + (float(np.max(np.abs(roots))) if roots.size else 0.0))
    base = -cmath.phase(a) / N
    thetas = sorted(float(np.remainder(base + 2 * math.pi * j / N, 2 * math.pi)) for j in range(N))
    # snap values within rounding of a multiple of pi/N*... to avoid 2pi - tiny
    thetas = [0.0 if abs(t - 2 * math.pi) < 1e-14 else t for t in thetas]
    return SectorFrame(tuple(sorted(thetas)), float(eps0), float(R), N, complex(a))


def _root_power_series(rho: np.ndarray, n_terms: int) -> np.ndarray:
    """Coefficients c_n of prod_k (1 - rho_k x)^(1/2) = sum c_n x^n."""
    c = np.zeros(n_terms, dtype=complex)
    c[0] = 1.0
    if rho.size == 0:
        return c
    # log of the product = -1/2 sum_j p_j x^j / j, p_j power sums
    j = np.arange(1, n_terms)
    p = np.array([np.sum(rho ** k) for k in j])
    ell = -0.5 * p / j
    for n in range(1, n_terms):
        c[n] = np.dot(j[:n] * ell[:n], c[n - 1::-1][:n]) / n
    return c


class AuxChart:
    """Chart Z_i on S_i intersected with {|z| > R}, with Z_i(R e^{i theta_i}) = 0."""

    def __init__(self, P: SchwarzianPolynomial, frame: SectorFrame, index: int, tol: float = 1e-12):
        self.P = P
        self.frame = frame
        self.index = index % frame.N
        self.N = frame.N
        self.m = self.N - 2
        self.theta = frame.thetas[self.index]
        self.rot = cmath.exp(-1j * self.theta)
        self.sqrt_abs_a = math.sqrt(abs(P.leading))
        self.K = 2 * self.sqrt_abs_a / self.N
        self.R = frame.R
        self.tol = tol
        self.rho = P.roots() * self.rot
        ratio = float(np.max(np.abs(self.rho))) / self.R if self.rho.size else 0.0
        if ratio >= 0.75:
            raise PreconditionError("R too small: roots of P too close to the chart boundary")
        n_terms = 1 if ratio == 0 else min(400, int(math.log(1e-19) / math.log(ratio)) + 6)
        self.coef = _root_power_series(self.rho, n_terms)
        self.exponents = self.m / 2 - np.arange(n_terms) + 1
        self.offset = complex(self._antiderivative(np.asarray([complex(self.R)]))[0])
        self.c = None  # tract threshold, attached by tract fitting
        self._aperture = None
        self._r_big = None

    # --- branch of sqrt(P) in the rotated variable
    def integrand(self, t):
        """sqrt|a| t^(m/2) prod sqrt(1 - rho/t): dZ/dt."""
        t = np.asarray(t, dtype=complex)
        out = self.sqrt_abs_a * t ** (self.m / 2)
        for r in self.rho:
            out = out * np.sqrt(1 - r / t)
        return out

    def sqrt_p(self, z):
        """The chart's branch of sqrt(P(z)) (dZ/dz)."""
        return self.rot * self.integrand(np.asarray(z, dtype=complex) * self.rot)

    def _antiderivative(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros(t.shape, dtype=complex)
        logt = np.log(t)
        for c, e in zip(self.coef, self.exponents):
            if c == 0:
                continue
            if e == 0:
                out += c * logt
            else:
                out += c * np.exp(e * logt) / e
        return self.sqrt_abs_a * out

    # --- chart value
    def _check(self, z, check: bool):
        if not check:
            return
        ok = self.frame.in_sector(self.index, z, tol=1e-9)
        if not np.all(ok):
            bad = np.asarray(z).ravel()[~np.asarray(ok).ravel()][0]
            raise PreconditionError(f"point {bad} outside sector {self.index} or inside |z| <= R")

    def value(self, z, check: bool = True):
        z = np.asarray(z, dtype=complex)
        self._check(z, check)
        t = np.atleast_1d(z * self.rot)
        out = self._antiderivative(t) - self.offset
        return out.reshape(z.shape) if z.ndim else complex(out[0])

    def value_quadrature(self, z, path: str = "ray-arc", check: bool = True) -> complex:
        """Z_i(z) by adaptive Gauss-Kronrod quadrature along a two-leg path."""
        z = complex(z)
        self._check(z, check)
        t = z * self.rot
        r, phi = abs(t), cmath.phase(t)
        g = self.integrand

        def radial(r0, r1, ph):
            e = cmath.exp(1j * ph)
            re = integrate.quad(lambda s: (g(s * e) * e).real, r0, r1, epsabs=0, epsrel=1e-13, limit=200)[0]
            im = integrate.quad(lambda s: (g(s * e) * e).imag, r0, r1, epsabs=0, epsrel=1e-13, limit=200)[0]
            return complex(re, im)

        def arc(rad, p0, p1):
            def h(p):
                w = rad * cmath.exp(1j * p)
                return g(w) * 1j * w
            re = integrate.quad(lambda p: h(p).real, p0, p1, epsabs=0, epsrel=1e-13, limit=200)[0]
            im = integrate.quad(lambda p: h(p).imag, p0, p1, epsabs=0, epsrel=1e-13, limit=200)[0]
            return complex(re, im)

        if path == "ray-arc":
            return radial(self.R, r, 0.0) + arc(r, 0.0, phi)
        if path == "arc-ray":
            return arc(self.R, 0.0, phi) + radial(self.R, r, phi)
        raise ValueError(f"unknown path {path!r}")

    def _correction_terms(self, log_t):
        """S(t) with Z = K t^(N/2) (1 + S(t)), from log t (no overflow)."""
        log_t = np.asarray(log_t, dtype=complex)
        e0 = self.exponents[0]
        S = np.zeros(log_t.shape, dtype=complex)
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            for n in range(1, len(self.coef)):
                c, e = self.coef[n], self.exponents[n]
                if c == 0:
                    continue
                if e == 0:
                    S += c * e0 * log_t * np.exp(-e0 * log_t)
                else:
                    S += (c * e0 / e) * np.exp(-n * log_t)
            S -= (self.offset * e0 / self.sqrt_abs_a) * np.exp(-e0 * log_t)
        return S

    def log_value_from_log(self, log_z):
        """log Z_i(z) from log z, for |z| possibly beyond float range."""
        log_z = np.asarray(log_z, dtype=complex)
        log_t = log_z.real + 1j * wrap_angle(log_z.imag - self.theta)
        if np.any(log_t.real < math.log(2 * self.R)):
            raise PreconditionError("log form needs |z| >= 2R")
        S = self._correction_terms(log_t)
        lead = math.log(self.K) + (self.N / 2) * log_t
        return lead + np.log1p(S) if np.all(np.abs(S) < 0.5) else lead + np.log(1 + S)

    def correction_envelope(self) -> tuple[float, float]:
        """(B, L0) with |S(t)| <= B exp(-log|t| / 2) whenever log|t| >= L0."""
        L0 = max(math.log(2 * self.R), 2.0)
        e0 = self.exponents[0]
        tot = 0.0
        for n in range(1, len(self.coef)):
            c, e = self.coef[n], self.exponents[n]
            if e == 0:
                tot += abs(c * e0) * L0 * math.exp(-e0 * L0)
            else:
                tot += abs(c * e0 / e) * math.exp(-n * L0)
        tot += abs(self.offset * e0 / self.sqrt_abs_a) * math.exp(-e0 * L0)
        return 1.05 * tot * math.exp(L0 / 2) + 1e-300, L0

    def correction_bound(self, abs_z: float) -> float:
        """Bound on |Z/(K t^(N/2)) - 1| at |t| = abs_z."""
        B, L0 = self.correction_envelope()
        L = math.log(abs_z)
        if L < L0:
            raise PreconditionError("correction bound needs |z| >= max(2R, e^2)")
        return B * math.exp(-L / 2)

    # --- high precision
    def _mp_coefficients(self):
        dps = mpmath.mp.dps
        cache = getattr(self, "_mp_cache", None)
        if cache is None or cache[0] != dps:
            coeffs = [mpmath.mpc(complex(v)) for v in reversed(self.P.coefficients)]
            rho = []
            if len(coeffs) > 1:
                roots = mpmath.polyroots(coeffs, maxsteps=200, extraprec=2 * dps)
                rot = mpmath.expj(-self.theta_mp())
                rho = [r * rot for r in (roots if isinstance(roots, (list, tuple)) else [roots])]
            ratio = max((float(abs(r)) for r in rho), default=0.0) / self.R
            n_terms = 1 if ratio == 0 else min(6000, int(dps * math.log(10) / -math.log(ratio)) + 10)
            c = [mpmath.mpc(1)] + [mpmath.mpc(0)] * (n_terms - 1)
            if rho:
                ell = [-sum(r ** j for r in rho) / (2 * j) for j in range(1, n_terms)]
                for n in range(1, n_terms):
                    c[n] = mpmath.fsum(j * ell[j - 1] * c[n - j] for j in range(1, n + 1)) / n
            self._mp_cache = (dps, c, rho)
        return self._mp_cache[1], self._mp_cache[2]

    def theta_mp(self):
        """theta_i at working precision (exact multiple of pi/N plus the leading phase)."""
        a = self.P.leading
        base = -mpmath.arg(mpmath.mpc(complex(a))) / self.N
        j = round((self.theta - float(base)) / (2 * math.pi / self.N))
        return base + 2 * mpmath.pi * j / self.N

    def _mp_antiderivative(self, t):
        c, _ = self._mp_coefficients()
        sq = mpmath.sqrt(mpmath.mpf(abs(complex(self.P.leading))))
        logt = mpmath.log(t)
        out = mpmath.mpc(0)
        e0 = mpmath.mpf(self.m) / 2 + 1
        tol = mpmath.mpf(10) ** (-mpmath.mp.dps - 5)
        first = None
        for n, cn in enumerate(c):
            e = e0 - n
            term = cn * logt if e == 0 else cn * mpmath.exp(e * logt) / e
            out += term
            if first is None:
                first = abs(term)
            elif n > 3 and abs(term) < tol * first:
                break
        return sq * out

    def value_mp(self, z):
        """Z_i(z) at the current mpmath precision."""
        t = mpmath.mpc(z) * mpmath.expj(-self.theta_mp())
        return self._mp_antiderivative(t) - self._mp_antiderivative(mpmath.mpc(self.R))

    def inverse_mp(self, Z, seed: complex | None = None):
        """Z_i^{-1}(Z) at the current precision, Newton from a float seed."""
        Z = mpmath.mpc(Z)
        if seed is None:
            seed = self.inverse(complex(Z)) if abs(complex(Z)) < 1e300 else None
        if seed is None:
            raise PreconditionError("inverse_mp needs a float-representable seed")
        rot = mpmath.expj(-self.theta_mp())
        t = mpmath.mpc(seed) * rot
        base = self._mp_antiderivative(mpmath.mpc(self.R))
        c, rho = self._mp_coefficients()
        sq = mpmath.sqrt(mpmath.mpf(abs(complex(self.P.leading))))
        tol = mpmath.mpf(10) ** (-mpmath.mp.dps + 3)
        for _ in range(200):
            F = self._mp_antiderivative(t) - base - Z
            d = sq * t ** (mpmath.mpf(self.m) / 2)
            for r in rho:
                d *= mpmath.sqrt(1 - r / t)
            step = F / d
            t -= step
            if abs(step) <= tol * max(1, abs(t)):
                break
        return t / rot

    # --- inverse
    def inverse(self, Z, tol: float = 1e-13, max_iter: int = 60):
        Z = np.asarray(Z, dtype=complex)
        flat = np.atleast_1d(Z).ravel()
        base = (self.N / 2) / self.sqrt_abs_a
        with np.errstate(all="ignore"):
            t = (base * flat + self.R ** (self.N / 2)) ** (2.0 / self.N)
        lead = self.offset / (self.sqrt_abs_a / self.exponents[0]) if self.exponents[0] else 0
        for _ in range(max_iter):
            F = self._antiderivative(t) - self.offset - flat
            d = self.integrand(t)
            step = F / d
            # damp steps that would leave the half-plane of validity
            big = np.abs(step) > 0.5 * np.abs(t)
            step[big] *= 0.5 * np.abs(t[big]) / np.abs(step[big])
            t = t - step
            if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(t))):
                break
        del lead
        resid = np.abs(self._antiderivative(t) - self.offset - flat)
        scale = np.maximum(1.0, np.abs(flat))
        if np.any(~np.isfinite(resid)) or np.any(resid > 1e-9 * scale):
            raise NewtonDivergence("chart inversion did not converge", float(np.nanmax(resid / scale)))
        z = t / self.rot
        return z.reshape(Z.shape) if Z.ndim else complex(z[0])

    # --- reported quantities
    def asymptotic_ratio(self, z):
        z = np.asarray(z, dtype=complex)
        t = z * self.rot
        return self.value(z) / (self.K * t ** (self.N / 2))

    def big_radius(self, rel: float = 0.01, samples: int = 65) -> float:
        """Smallest radius (by bisection in log r) beyond which the asymptotic
        ratio stays within rel of 1 on sampled sector directions.

        The bisection aims at 0.999 rel so that directions between the samples
        stay inside rel as well.
        """
        if self._r_big is not None and rel == 0.01:
            return self._r_big
        h = self.frame.half_opening * 0.999
        angs = self.theta + np.linspace(-h, h, samples)
        target = 0.999 * rel

        def worst(r):
            rs = r * np.array([1.0, 1.5, 2.0, 4.0, 8.0])
            z = (rs[:, None] * np.exp(1j * angs[None, :])).ravel()
            return float(np.max(np.abs(self.asymptotic_ratio(z) - 1)))

        lo, hi = math.log(self.R * 1.0001), math.log(self.R * 1.0001)
        if worst(math.exp(lo)) <= target:
            r = math.exp(lo)
        else:
            while worst(math.exp(hi)) > target:
                hi += math.log(2.0)
                if hi > math.log(1e12):
                    raise ArithmeticError("asymptotic ratio did not settle")
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if worst(math.exp(mid)) <= target:
                    hi = mid
                else:
                    lo = mid
            r = math.exp(hi)
        if rel == 0.01:
            self._r_big = r
        return r

    def aperture(self) -> float:
        """Empirical epsilon: the image of the sector boundary rays, far out,
        stays at |arg Z| >= pi - epsilon."""
        if self._aperture is None:
            lo, hi = self.frame.boundary_rays(self.index)
            r0 = max(self.big_radius(), 2 * self.R)
            rs = r0 * np.geomspace(1, 1e6, 40)
            z = np.concatenate([rs * cmath.exp(1j * lo), rs * cmath.exp(1j * hi)])
            Zv = self.value(z, check=False)
            self._aperture = float(math.pi - np.min(np.abs(np.angle(Zv))))
        return self._aperture


def build_charts(P: SchwarzianPolynomial, eps0: float | None = None, R: float | None = None) -> list[AuxChart]:
    frame = critical_rays(P, eps0, R)
    return [AuxChart(P, frame, i) for i in range(frame.N)]


def aux_value(chart: AuxChart, z, method: str = "series"):
    if method == "series":
        return chart.value(z)
    if method == "quadrature":
        if np.ndim(z):
            return np.array([chart.value_quadrature(w) for w in np.ravel(z)]).reshape(np.shape(z))
        return chart.value_quadrature(z)
    raise ValueError(f"unknown method {method!r}")


def aux_inverse(chart: AuxChart, Z):
    Z = np.asarray(Z, dtype=complex)
    eps = chart.aperture()
    if np.any(np.abs(np.angle(Z)) >= math.pi - eps) and np.any(np.abs(Z) > 0):
        bad = np.abs(np.angle(Z)) >= math.pi - eps
        if np.any(bad & (np.abs(Z) > 0)):
            raise PreconditionError("Z outside the image sector |arg Z| < pi - eps")
    z = chart.inverse(Z)
    if not np.all(chart.frame.in_sector(chart.index, z, tol=1e-7)):
        raise PreconditionError("inverse landed outside the sector")
    return z


@dataclass
class OverlapReport:
    constant: complex
    residual: float
    im_positive: bool
    min_im: float
    samples: int
    extra: dict = field(default_factory=dict)


def overlap_consistency(chart_i: AuxChart, chart_j: AuxChart, samples) -> OverlapReport:
    """Z_i + Z_{i+1} is constant on the overlap, and Im Z_i > 0 there."""
    if (chart_i.index + 1) % chart_i.N != chart_j.index:
        raise ValueError("charts must be adjacent (i, i+1)")
    z = np.atleast_1d(np.asarray(samples, dtype=complex))
    if not np.all(chart_i.frame.in_overlap(chart_i.index, z)):
        raise PreconditionError("samples must lie in the overlap of the two sectors outside |z| <= R")
    zi = chart_i.value(z)
    zj = chart_j.value(z)
    s = zi + zj
    const = complex(np.median(s.real), np.median(s.imag))
    return OverlapReport(const, float(np.max(np.abs(s - const))), bool(np.all(zi.imag > 0)),
                         float(np.min(zi.imag)), int(z.size))


def overlap_samples(frame: SectorFrame, i: int, count: int, rng: np.random.Generator,
                    r_max_factor: float = 20.0) -> np.ndarray:
    """Uniform-ish random points of S_i cap S_{i+1} cap {R < |z| < r_max_factor R}."""
    th0 = frame.thetas[i]
    th1 = frame.thetas[(i + 1) % frame.N] + (2 * math.pi if i + 1 == frame.N else 0.0)
    lo = th1 - frame.half_opening
    hi = th0 + frame.half_opening
    ang = rng.uniform(lo, hi, count)
    rad = frame.R * rng.uniform(1.05, r_max_factor, count)
    return rad * np.exp(1j * ang)
