"""Nevanlinna functions: polynomial Schwarzian, evaluation, post-singular orbits.

Every function here is a Möbius image of a quotient g = u1/u2 of two
independent solutions of  w'' + P w = 0.  Then S(f) = 2P, the poles of f
are the points where g hits M^{-1}(inf), and f has no critical points.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy import special
from scipy.integrate import solve_ivp

POLE_THRESHOLD = 1e8
ORBIT_SNAP = 1e-6
POLE_LOCAL_RADIUS = 1e-3
INF = complex(math.inf, 0.0)


class NotAllPrepoles(Exception):
    """Some asymptotic value does not reach infinity within the step budget."""


class IntegrationFailure(Exception):
    pass


def chordal(z, w):
    """Spherical (chordal) distance on the Riemann sphere; inf means the point at infinity."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    zi = ~np.isfinite(z)
    wi = ~np.isfinite(w)
    with np.errstate(invalid="ignore", over="ignore"):
        fin = 2 * np.abs(z - w) / np.sqrt((1 + np.abs(z) ** 2) * (1 + np.abs(w) ** 2))
        to_inf_z = 2 / np.sqrt(1 + np.abs(w) ** 2)
        to_inf_w = 2 / np.sqrt(1 + np.abs(z) ** 2)
    out = np.where(zi & wi, 0.0, np.where(zi, to_inf_z, np.where(wi, to_inf_w, fin)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SchwarzianPolynomial:
    """P(z) = sum coefficients[n] z**n with nonzero leading coefficient; N = degree + 2."""

    coefficients: tuple

    def __post_init__(self):
        c = [complex(x) for x in self.coefficients]
        while len(c) > 1 and c[-1] == 0:
            c.pop()
        if not c or c[-1] == 0:
            raise ValueError("P must be a nonzero polynomial")
        object.__setattr__(self, "coefficients", tuple(c))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def leading(self) -> complex:
        return self.coefficients[-1]

    @property
    def order(self) -> int:
        return self.degree + 2

    def __call__(self, z):
        return np.polynomial.polynomial.polyval(z, np.asarray(self.coefficients))

    def roots(self) -> np.ndarray:
        if self.degree == 0:
            return np.zeros(0, dtype=complex)
        return np.polynomial.polynomial.polyroots(np.asarray(self.coefficients)).astype(complex)


@dataclass(frozen=True)
class Mobius:
    a: complex
    b: complex
    c: complex
    d: complex

    def __post_init__(self):
        if abs(self.a * self.d - self.b * self.c) == 0:
            raise ValueError("degenerate Möbius map")

    @classmethod
    def identity(cls) -> "Mobius":
        return cls(1, 0, 0, 1)

    @property
    def det(self) -> complex:
        return self.a * self.d - self.b * self.c

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        a, b, c, d = self.a, self.b, self.c, self.d
        with np.errstate(all="ignore"):
            fin = (a * w + b) / (c * w + d)
            at_inf = a / c if c != 0 else INF
            out = np.where(np.isfinite(w), fin, at_inf)
            out = np.where(np.isfinite(w) & (c * w + d == 0), INF, out)
        return out if out.ndim else complex(out)

    def __matmul__(self, other: "Mobius") -> "Mobius":
        return Mobius(self.a * other.a + self.b * other.c, self.a * other.b + self.b * other.d,
                      self.c * other.a + self.d * other.c, self.c * other.b + self.d * other.d)

    def inverse(self) -> "Mobius":
        return Mobius(self.d, -self.b, -self.c, self.a)

    def pole(self) -> complex:
        """Point sent to infinity."""
        return -self.d / self.c if self.c != 0 else INF


# ---------------------------------------------------------------- base quotients


class Quotient:
    """g = u1/u2 for two solutions of w'' + P w = 0."""

    schwarzian: SchwarzianPolynomial
    name = "quotient"
    has_mp = False

    def ratio(self, z):
        raise NotImplementedError

    def ratio_derivative(self, z):
        raise NotImplementedError

    def mp_ratio(self, z):
        raise NotImplementedError

    def poles_of_ratio(self, radius: float) -> list[complex] | None:
        """Closed-form poles of g in the disk, or None when unknown."""
        return None

    def solve_ratio(self, target: complex, radius: float) -> list[complex] | None:
        return None

    def ratio_and_derivative(self, z):
        return self.ratio(z), self.ratio_derivative(z)

    def params(self) -> dict:
        return {}


class TangentQuotient(Quotient):
    name = "tangent"
    has_mp = True

    def __init__(self):
        self.schwarzian = SchwarzianPolynomial((1,))

    def ratio(self, z):
        with np.errstate(invalid="ignore"):
            return np.tan(np.asarray(z, dtype=complex))

    def ratio_derivative(self, z):
        with np.errstate(invalid="ignore"):
            t = np.tan(np.asarray(z, dtype=complex))
        return 1 + t * t

    def mp_ratio(self, z):
        # reduce first: mpmath loses relative accuracy of tan right next to a pole
        n = mpmath.nint(mpmath.re(z) / mpmath.pi)
        r = z - n * mpmath.pi
        if abs(mpmath.re(r)) > mpmath.pi / 4:
            s = r - mpmath.sign(mpmath.re(r)) * mpmath.pi / 2
            return -1 / mpmath.tan(s)
        return mpmath.tan(r)

    def poles_of_ratio(self, radius):
        n = int(radius / math.pi) + 2
        return [complex(math.pi / 2 + k * math.pi) for k in range(-n, n + 1)
                if abs(math.pi / 2 + k * math.pi) <= radius]


class ExponentialQuotient(Quotient):
    """g = e^z = e^{z/2}/e^{-z/2};  S(e^z) = -1/2."""

    name = "exponential"
    has_mp = True

    def __init__(self):
        self.schwarzian = SchwarzianPolynomial((-0.25,))

    def ratio(self, z):
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(z, dtype=complex))

    def ratio_derivative(self, z):
        return self.ratio(z)

    def mp_ratio(self, z):
        return mpmath.exp(z)

    def poles_of_ratio(self, radius):
        return []

    def solve_ratio(self, target, radius):
        if target == 0:
            return []
        base = cmath.log(target)
        n = int(radius / (2 * math.pi)) + 2
        return [base + 2j * math.pi * k for k in range(-n, n + 1) if abs(base + 2j * math.pi * k) <= radius]


class AiryQuotient(Quotient):
    """g = Ai/Bi for P = -z (w'' = z w)."""

    name = "airy"
    has_mp = True

    def __init__(self):
        self.schwarzian = SchwarzianPolynomial((0, -1))

    def ratio(self, z):
        z = np.asarray(z, dtype=complex)
        eai, _, ebi, _ = special.airye(z)
        zeta = (2.0 / 3.0) * z * np.sqrt(z)
        with np.errstate(all="ignore"):
            out = eai / ebi * np.exp(-zeta - np.abs(zeta.real))
        return out

    def ratio_derivative(self, z):
        z = np.asarray(z, dtype=complex)
        _, _, ebi, _ = special.airye(z)
        zeta = (2.0 / 3.0) * z * np.sqrt(z)
        with np.errstate(all="ignore"):
            return -(1 / math.pi) * np.exp(-2 * np.abs(zeta.real)) / (ebi * ebi)

    def mp_ratio(self, z):
        return mpmath.airyai(z) / mpmath.airybi(z)


class ODEQuotient(Quotient):
    """g = u1/u2 from numerical integration of w'' + P w = 0 from a base point.

    initial = (u1(z0), u1'(z0), u2(z0), u2'(z0)).
    """

    name = "ode"

    def __init__(self, P: SchwarzianPolynomial, base: complex = 0.0,
                 initial: Sequence[complex] = (0, 1, 1, 0), rtol: float = 1e-13, chunk: int = 16):
        self.schwarzian = P
        self.base = complex(base)
        self.initial = tuple(complex(v) for v in initial)
        u1, du1, u2, du2 = self.initial
        self.wronskian = du1 * u2 - u1 * du2
        if self.wronskian == 0:
            raise ValueError("initial conditions give dependent solutions")
        self.rtol = rtol
        self.chunk = chunk

    def params(self):
        return {"base": [self.base.real, self.base.imag],
                "initial": [[v.real, v.imag] for v in self.initial],
                "P": [[c.real, c.imag] for c in self.schwarzian.coefficients]}

    def solutions(self, z) -> np.ndarray:
        """Array of shape (4, n): u1, u1', u2, u2' at the points z."""
        z = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
        out = np.empty((4, z.size), dtype=complex)
        coeffs = np.asarray(self.schwarzian.coefficients)
        for start in range(0, z.size, self.chunk):
            zz = z[start:start + self.chunk]
            step = zz - self.base
            m = zz.size

            def rhs(t, y, step=step):
                s = self.base + t * step
                p = np.polynomial.polynomial.polyval(s, coeffs)
                y = y.reshape(4, m)
                return (step * np.stack([y[1], -p * y[0], y[3], -p * y[2]])).ravel()

            y0 = np.repeat(np.asarray(self.initial)[:, None], m, axis=1).ravel()
            sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=self.rtol,
                            atol=1e-15)
            if not sol.success:
                raise IntegrationFailure(sol.message)
            out[:, start:start + m] = sol.y[:, -1].reshape(4, m)
        return out

    def ratio(self, z):
        shape = np.shape(z)
        u = self.solutions(z)
        with np.errstate(all="ignore"):
            g = u[0] / u[2]
        g = np.where(u[2] == 0, INF, g)
        return g.reshape(shape) if shape else complex(g[0])

    def ratio_derivative(self, z):
        return self.ratio_and_derivative(z)[1]

    def ratio_and_derivative(self, z):
        shape = np.shape(z)
        u = self.solutions(z)
        with np.errstate(all="ignore"):
            g = np.where(u[2] == 0, INF, u[0] / u[2])
            d = self.wronskian / (u[2] * u[2])
        if not shape:
            return complex(g[0]), complex(d[0])
        return g.reshape(shape), d.reshape(shape)


# ---------------------------------------------------------------- the function


@dataclass(frozen=True)
class Evaluated:
    value: complex
    near_pole: bool


@dataclass
class PoleData:
    location: complex
    residue: complex
    laurent: np.ndarray  # coefficients a_0, a_1, ... of the regular part
    radius: float


class NevanlinnaFunction:
    """f = M o g with g a solution quotient.

    ``pole_radius`` bounds the working disk for the pole catalog.
    """

    def __init__(self, quotient: Quotient, outer: Mobius | None = None, name: str | None = None,
                 pole_radius: float = 12.0):
        self.quotient = quotient
        self.outer = outer or Mobius.identity()
        self.name = name or quotient.name
        self.pole_radius = pole_radius
        self._poles: list[complex] | None = None
        self._pole_data: dict[int, PoleData] = {}
        self._asym: list[complex] | None = None
        # exact outer coefficients at the working precision, when known in closed form
        self.mp_outer: Callable[[], tuple] | None = None

    # basic data
    @property
    def schwarzian(self) -> SchwarzianPolynomial:
        return self.quotient.schwarzian

    @property
    def N(self) -> int:
        return self.schwarzian.order

    def describe(self) -> dict:
        m = self.outer
        return {"name": self.name, "family": self.quotient.name,
                "outer": [[v.real, v.imag] for v in (complex(m.a), complex(m.b), complex(m.c), complex(m.d))],
                "quotient": self.quotient.params()}

    def post_compose(self, M: Mobius) -> "NevanlinnaFunction":
        return NevanlinnaFunction(self.quotient, M @ self.outer, f"mobius({self.name})", self.pole_radius)

    # evaluation
    def __call__(self, z):
        g = self.quotient.ratio(z)
        return self.outer(g)

    def evaluate(self, z: complex) -> Evaluated:
        """f(z) on the sphere; |f| above the pole threshold is reported as infinity."""
        z = complex(z)
        if not cmath.isfinite(z):
            raise ValueError("evaluate requires a finite point")
        w = complex(self(z))
        if not cmath.isfinite(w) or abs(w) > POLE_THRESHOLD:
            return Evaluated(INF, True)
        return Evaluated(w, False)

    def derivative(self, z):
        """f'(z) = det(M) g'(z) / (c g + d)^2."""
        g = self.quotient.ratio(z)
        dg = self.quotient.ratio_derivative(z)
        m = self.outer
        with np.errstate(all="ignore"):
            fin = m.det * dg / (m.c * g + m.d) ** 2
            # g = inf: f' = -det * g' / (c g)^2 ... = det * (1/g)' * (-1) / c^2 ; use limit via 1/g
            inv = 1 / g
            alt = -m.det * (-dg * inv * inv) / (m.c + m.d * inv) ** 2
        big = np.abs(g) > 1e150
        out = np.where(big, alt, fin)
        return out if np.ndim(out) else complex(out)

    def mp_value(self, z, dps: int = 50):
        """High-precision f(z) through mpmath (closed-form families only)."""
        if not self.quotient.has_mp:
            raise NotImplementedError("no high-precision backend for this family")
        with mpmath.workdps(dps):
            return self._mp_step(mpmath.mpc(z))

    def _mp_step(self, z):
        g = self.quotient.mp_ratio(z)
        if self.mp_outer is not None:
            a, b, c, d = self.mp_outer()
        else:
            m = self.outer
            a, b, c, d = (mpmath.mpc(complex(v)) for v in (m.a, m.b, m.c, m.d))
        return (a * g + b) / (c * g + d)

    def mp_iterate(self, z, steps: int, dps: int = 50):
        """f^steps(z) at dps digits; exact outer coefficients are used when available."""
        if not self.quotient.has_mp:
            raise NotImplementedError("no high-precision backend for this family")
        with mpmath.workdps(dps):
            w = mpmath.mpc(z)
            for _ in range(steps):
                w = self._mp_step(w)
            return w

    # poles
    def poles(self) -> list[complex]:
        """Pole catalog inside the working disk, sorted by modulus then argument."""
        if self._poles is None:
            self._poles = self._find_poles(self.pole_radius)
        return self._poles

    def _find_poles(self, radius: float) -> list[complex]:
        target = self.outer.pole()  # f = inf  <=>  g = target
        q = self.quotient
        found = None
        if not cmath.isfinite(target):
            found = q.poles_of_ratio(radius)
        else:
            found = q.solve_ratio(target, radius)
        if found is None:
            found = self._newton_poles(target, radius)
        unique: list[complex] = []
        for p in found:
            if all(abs(p - u) > 1e-9 for u in unique):
                unique.append(complex(p))
        return sorted(unique, key=lambda p: (round(abs(p), 9), cmath.phase(p)))

    def _newton_poles(self, target: complex, radius: float) -> list[complex]:
        h = 0.35 if self.quotient.has_mp else 0.7
        xs = np.arange(-radius, radius + h / 2, h)
        seeds = (xs[:, None] + 1j * xs[None, :]).ravel()
        z = seeds[np.abs(seeds) <= radius]
        active = np.ones(z.size, dtype=bool)
        q = self.quotient
        for _ in range(40):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            g, dg = q.ratio_and_derivative(z[idx])
            g, dg = np.asarray(g), np.asarray(dg)
            with np.errstate(all="ignore"):
                step = (g - target) / dg if cmath.isfinite(target) else -g / dg
            step = np.where(np.isfinite(step), step, 0)
            big = np.abs(step) > 1.0
            step[big] = step[big] / np.abs(step[big])
            z[idx] -= step
            done = (np.abs(step) < 1e-14 * (1 + np.abs(z[idx]))) | (np.abs(z[idx]) > 2 * radius)
            active[idx[done]] = False
        z = z[np.abs(z) <= radius]
        g = np.asarray(q.ratio(z))
        with np.errstate(all="ignore"):
            if cmath.isfinite(target):
                ok = np.abs(g - target) < 1e-8 * (1 + abs(target))
            else:
                ok = ~np.isfinite(g) | (np.abs(g) > 1e10)
        out: list[complex] = []
        for p in z[ok]:
            if all(abs(p - r) > 1e-7 for r in out):
                out.append(complex(p))
        return out

    def nearest_pole(self, w: complex, tol: float = ORBIT_SNAP) -> complex | None:
        """Catalog pole within spherical distance tol of w, refining by Newton outside the catalog."""
        w = complex(w)
        if self.poles():
            p = min(self.poles(), key=lambda p: abs(p - w))
            if chordal(p, w) < tol:
                return p
        if abs(w) <= self.pole_radius:
            return None
        # outside the working disk: local Newton on 1/f
        z = w
        for _ in range(30):
            fz = complex(self(z))
            if not cmath.isfinite(fz):
                break
            dz = complex(self.derivative(z))
            if dz == 0 or not cmath.isfinite(dz):
                return None
            step = fz / dz  # Newton for 1/f: z - (1/f)/((1/f)') = z + f/f'
            z = z + step
            if abs(step) < 1e-15 * (1 + abs(z)):
                break
        if chordal(z, w) < tol and (not cmath.isfinite(complex(self(z))) or abs(complex(self(z))) > 1e12):
            return z
        return None

    def pole_data(self, index: int) -> PoleData:
        """Residue and regular Laurent part at a catalog pole (contour integrals, cached)."""
        if index not in self._pole_data:
            p = self.poles()[index]
            others = [abs(p - r) for r in self.poles() if r != p]
            rho = min([0.25] + [0.4 * d for d in others])
            M = 64
            t = np.exp(2j * np.pi * np.arange(M) / M)
            vals = np.asarray(self(p + rho * t))
            coef = np.fft.fft(vals) / M  # coef[n] = a_n rho^n for n >= -M/2 (aliased)
            n = np.arange(M)
            n = np.where(n < M // 2, n, n - M)
            a = coef / rho ** n
            residue = complex(a[n == -1][0])
            laurent = np.array([a[n == j][0] for j in range(M // 2 - 8)])
            self._pole_data[index] = PoleData(p, residue, laurent, rho)
        return self._pole_data[index]

    def pole_local(self, index: int, delta):
        """f(p + delta) from the Laurent expansion at catalog pole p (|delta| small)."""
        d = self.pole_data(index)
        delta = np.asarray(delta, dtype=complex)
        with np.errstate(all="ignore"):
            reg = np.polynomial.polynomial.polyval(delta, d.laurent)
            return d.residue / delta + reg

    # asymptotic values and orbits
    def asymptotic_values(self) -> list[complex]:
        """lambda_i: limit of f inside tract i (between critical rays i and i+1)."""
        if self._asym is None:
            P = self.schwarzian
            N = P.order
            a = P.leading
            base = (-cmath.phase(a)) / N
            thetas = sorted(((base + 2 * math.pi * j / N) % (2 * math.pi)) for j in range(N))
            vals = []
            r0 = 2 * (1 + max([abs(r) for r in P.roots()] + [0.0]))
            for th in thetas:
                direction = cmath.exp(1j * (th + math.pi / N))
                est = []
                for height in (22.0, 26.0):
                    t = (height * N / (2 * math.sqrt(abs(a)))) ** (2.0 / N)
                    t = max(t, r0 + 1)
                    est.append(complex(self(t * direction)))
                if abs(est[0] - est[1]) > 1e-9 * (1 + abs(est[1])):
                    raise ArithmeticError(f"asymptotic value along {th:.4f} did not settle: {est}")
                vals.append(est[1])
            self._asym = [self._clean(v) for v in vals]
        return self._asym

    @staticmethod
    def _clean(v: complex) -> complex:
        re = 0.0 if abs(v.real) < 1e-15 * (1 + abs(v)) else v.real
        im = 0.0 if abs(v.imag) < 1e-15 * (1 + abs(v)) else v.imag
        return complex(re, im)


# ---------------------------------------------------------------- families


def tangent(lam: complex = -0.5j * math.pi, pole_radius: float = 12.0) -> NevanlinnaFunction:
    """lam * tan z; the default is the all-prepoles map -(pi i/2) tan z."""
    f = NevanlinnaFunction(TangentQuotient(), Mobius(lam, 0, 0, 1), f"tangent({lam})", pole_radius)
    f._asym = [1j * complex(lam), -1j * complex(lam)]
    if complex(lam) == -0.5j * math.pi:
        f.mp_outer = lambda: (-0.5j * mpmath.pi, mpmath.mpc(0), mpmath.mpc(0), mpmath.mpc(1))
    return f


def exponential(mobius: Mobius | None = None, pole_radius: float = 12.0) -> NevanlinnaFunction:
    M = mobius or Mobius.identity()
    f = NevanlinnaFunction(ExponentialQuotient(), M, "exponential", pole_radius)
    # tract 0 is the left half-plane (g -> 0), tract 1 the right one (g -> inf)
    f._asym = [complex(M(0.0)), complex(M(INF))]
    return f


def airy(mobius: Mobius | None = None, pole_radius: float = 12.0) -> NevanlinnaFunction:
    return NevanlinnaFunction(AiryQuotient(), mobius or Mobius.identity(), "airy", pole_radius)


def airy_symmetric(pole_radius: float = 12.0) -> NevanlinnaFunction:
    """A cubic-symmetric Airy quotient whose three asymptotic values are poles.

    With y1, y2 the solutions of w'' = z w normalized at 0 (y1 even-type, y2
    odd-type), q = y2/y1 satisfies q(omega z) = omega q(z) for omega a cube
    root of unity.  Its asymptotic values are mu * omega^j with mu = q(+inf).
    Scaling by s = z0/mu, with z0 the first negative zero of y1, makes every
    asymptotic value a zero of y1, hence a pole.
    """
    # q = (c1/c2)(1 - sqrt3 g)/(1 + sqrt3 g) with g = Ai/Bi; after scaling
    # the outer map is z0 (1 - sqrt3 g)/(1 + sqrt3 g)
    k = complex(_airy_y1_zero(30))
    r3 = math.sqrt(3)
    M = Mobius(-k * r3, k, r3, 1)
    f = NevanlinnaFunction(AiryQuotient(), M, "airy_symmetric", pole_radius)

    def exact():
        z0 = _airy_y1_zero(mpmath.mp.dps)
        s3 = mpmath.sqrt(3)
        return (-z0 * s3, mpmath.mpc(z0), mpmath.mpc(s3), mpmath.mpc(1))

    f.mp_outer = exact
    return f


_Y1_ZERO: dict[int, object] = {}


def _airy_y1_zero(dps: int):
    """First negative zero of Ai + Bi/sqrt3 at the given precision."""
    if dps not in _Y1_ZERO:
        with mpmath.workdps(dps + 10):
            s3 = mpmath.sqrt(3)
            z = mpmath.findroot(lambda x: mpmath.airyai(x) + mpmath.airybi(x) / s3, mpmath.mpf("-1.98635"))
        _Y1_ZERO[dps] = +z
    return _Y1_ZERO[dps]


def ode_quotient(P: SchwarzianPolynomial | Sequence[complex], base: complex = 0.0,
                 initial: Sequence[complex] = (0, 1, 1, 0), mobius: Mobius | None = None,
                 pole_radius: float = 8.0) -> NevanlinnaFunction:
    if not isinstance(P, SchwarzianPolynomial):
        P = SchwarzianPolynomial(tuple(P))
    return NevanlinnaFunction(ODEQuotient(P, base, initial), mobius, "ode", pole_radius)


FAMILIES = {"tangent", "exponential", "airy", "airy_symmetric", "ode"}


def from_spec(spec: dict) -> NevanlinnaFunction:
    """Build a function from a config block {"family": ..., ...}."""
    spec = dict(spec)
    fam = spec.pop("family", None)
    if fam not in FAMILIES:
        raise ValueError(f"unknown family {fam!r}; expected one of {sorted(FAMILIES)}")
    radius = float(spec.pop("pole_radius", 12.0))

    def cplx(v):
        if isinstance(v, (list, tuple)):
            return complex(v[0], v[1])
        return complex(v)

    mob = spec.pop("mobius", None)
    M = Mobius(*[cplx(v) for v in mob]) if mob is not None else None
    if fam == "tangent":
        lam = cplx(spec.pop("lambda", [0.0, -math.pi / 2]))
        f = tangent(lam, radius)
        if M is not None:
            f = f.post_compose(M)
    elif fam == "exponential":
        f = exponential(M, radius)
    elif fam == "airy":
        f = airy(M, radius)
    elif fam == "airy_symmetric":
        if M is not None:
            raise ValueError("airy_symmetric has a fixed outer map; use family 'airy' with 'mobius'")
        f = airy_symmetric(radius)
    else:
        P = [cplx(v) for v in spec.pop("P")]
        base = cplx(spec.pop("base", 0.0))
        init = [cplx(v) for v in spec.pop("initial", [0, 1, 1, 0])]
        f = ode_quotient(P, base, init, M, radius)
    if spec:
        raise ValueError(f"unknown function keys: {sorted(spec)}")
    return f


# ---------------------------------------------------------------- Schwarzian check


@dataclass
class SchwarzianReport:
    max_residual: float
    tol: float
    passed: bool
    residuals: np.ndarray
    excluded: list = field(default_factory=list)


def cauchy_derivatives(func, z: complex, rho: float, orders: int = 3, M: int = 32) -> list[complex]:
    """f(z), f'(z), ..., f^(orders)(z) from samples on a circle (trapezoid rule)."""
    t = np.exp(2j * np.pi * np.arange(M) / M)
    vals = np.asarray(func(z + rho * t), dtype=complex)
    coef = np.fft.fft(vals) / M
    return [complex(coef[n] * math.factorial(n) / rho ** n) for n in range(orders + 1)]


def schwarzian_at(f, z: complex, rho: float) -> complex:
    _, d1, d2, d3 = cauchy_derivatives(f, z, rho)
    return d3 / d1 - 1.5 * (d2 / d1) ** 2


def verify_schwarzian(f: NevanlinnaFunction, P: SchwarzianPolynomial, samples, tol: float = 1e-6,
                      margin: float = 0.05) -> SchwarzianReport:
    """Relative residual |S(f) - 2P| / max(1, |2P|) at sample points."""
    poles = np.asarray(f.poles(), dtype=complex)
    res, excluded = [], []
    for z in np.atleast_1d(np.asarray(samples, dtype=complex)):
        dist = float(np.min(np.abs(poles - z))) if poles.size else math.inf
        if dist < margin:
            excluded.append((complex(z), "too close to a pole"))
            continue
        rho = min(0.2, dist / 3)
        s = schwarzian_at(f, complex(z), rho)
        target = 2 * complex(P(z))
        res.append(abs(s - target) / max(1.0, abs(target)))
    res = np.asarray(res)
    worst = float(res.max()) if res.size else math.nan
    return SchwarzianReport(worst, tol, bool(res.size) and worst < tol, res, excluded)


# ---------------------------------------------------------------- post-singular set


@dataclass
class PostSingularSet:
    finite_points: list[complex]
    orbits: list[list[complex]]
    prepole_orders: list[int]
    includes_infinity: bool = True

    def points(self) -> list[complex]:
        return list(self.finite_points) + [INF]


def post_singular_set(f: NevanlinnaFunction, max_steps: int = 20, tol: float = ORBIT_SNAP) -> PostSingularSet:
    """Orbits lambda_i, f(lambda_i), ... up to the pole that maps to infinity."""
    orbits, orders = [], []
    for lam in f.asymptotic_values():
        w = complex(lam)
        orbit = []
        for step in range(1, max_steps + 1):
            p = f.nearest_pole(w, tol)
            if p is not None:
                orbit.append(p)
                orders.append(step)
                break
            orbit.append(w)
            v = complex(f(w))
            if not cmath.isfinite(v):
                raise NotAllPrepoles(f"orbit of {lam} hit an uncataloged singular value")
            w = v
        else:
            raise NotAllPrepoles(f"orbit of asymptotic value {lam} does not reach a pole in {max_steps} steps")
        orbits.append(orbit)
    finite: list[complex] = []
    for orb in orbits:
        for w in orb:
            if all(abs(w - u) > 1e-9 * (1 + abs(u)) for u in finite):
                finite.append(w)
    return PostSingularSet(finite, orbits, orders)
