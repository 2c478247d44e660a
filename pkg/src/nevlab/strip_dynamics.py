"""Horizontal strips, lattice rectangles and the composed map Psi.

Psi_{i,j} sends a point Z of the upper tract of chart i to Z_j(Phi_i(Z)),
where Phi_i = 1/h_i(exp(2iZ)) is the tract map.  Heights are organised in
strips Hor_k = [alpha_k + 2 alpha_{k-1}, alpha_{k+1} - 2 alpha_k] which are
mapped into one another, with alpha_k = exp(N alpha_{k-1}) quickly leaving
floating point.  Three evaluation regimes are used:

* machine: Psi as a float complex number;
* log: log Psi from log Phi, heights reported as tower enclosures;
* tower: the input height is itself a tower; only Im Psi is tracked.

Statements about whole rectangles at tower heights are certified with
:class:`AlphaAffine` combinations, in which the huge alpha terms cancel
symbolically.  Those certificates are relative to the tract model (exact
for the tangent flagship).

The series for Z_j converges for |t| > R at any |arg t| < pi, so Z_j is
used on the full half-turn on either side of theta_j (rectangle images
stay strictly inside it).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .aux_charts import PreconditionError, wrap_angle
from .tower_arith import AlphaAffine, AlphaTable, Ordering, Signed, TowerInterval, TowerReal
from .tract_models import UPPER, TractSystem

SQRT2PI = math.sqrt(2) * math.pi
LEFTOVER_CONSTANT = 4 * math.sqrt(2) * math.pi ** 2 + 6
LOG_TOL = 1e-9  # absolute slack on float logarithms of Psi
MACHINE_LOG_LIMIT = 690.0


@dataclass(frozen=True)
class StripState:
    """A point of plane ``plane``: height y (float or tower) and Re Z (None if lost mod pi)."""

    plane: int
    y: float | TowerInterval
    x: float | None = None


@dataclass(frozen=True)
class Location:
    kind: str  # "strip", "gap", "below" or "boundary-uncertain"
    k: int | None = None
    square: tuple[int, int] | None = None
    rect: int | None = None


def _interval(y) -> TowerInterval:
    return y if isinstance(y, TowerInterval) else TowerInterval.point(float(y))


def _log_to_tower(lo: float, hi: float) -> TowerInterval:
    return TowerInterval(TowerReal.of(lo, False), TowerReal.of(hi, True)).exp()


class StripLattice:
    """Anchors, strips, squares and rectangles in every upper tract."""

    def __init__(self, system: TractSystem, alpha0: float, k_max: int = 8):
        if alpha0 <= max(system.c, 1.0):
            raise PreconditionError("alpha0 must exceed the tract threshold c and 1")
        self.system = system
        self.f = system.f
        self.N = system.N
        self.alpha = AlphaTable(self.N, alpha0, k_max)
        self.charts = system.charts
        self.models = [system.model(i, UPPER) for i in range(self.N)]
        self.K = self.charts[0].K
        self._mp_anchor: dict[tuple, object] = {}
        # h'(0) at infinity: the mp limit when an exact high-precision backend
        # exists, otherwise the tract model's value
        self.hprime = [self._limit_hprime(i) for i in range(self.N)]
        self.log_m = [-math.log(abs(h)) for h in self.hprime]
        self.theta0 = system.frame.thetas[0]
        # arg Phi = -arg h'(0) - 2x, so arg Phi = theta_j at x = anchor(i, j)
        self._x0 = [(-self.theta0 - cmath.phase(h)) / 2 for h in self.hprime]
        self._shift = [cmath.log(mdl.hprime0) - cmath.log(h) for mdl, h in zip(self.models, self.hprime)]
        self._envelope = [ch.correction_envelope() for ch in self.charts]
        # |Phi / Phi_model - 1| <= lg_constant / |Z| (Liouville-Green remainder; ~0 for exact models)
        self.lg_constant = [self._fit_lg_constant(i) for i in range(self.N)]

    @property
    def model_exact(self) -> bool:
        return max(self.lg_constant) < 1e-9

    def _has_exact_mp(self) -> bool:
        return self.f.quotient.has_mp and self.f.mp_outer is not None

    def _limit_hprime(self, i: int) -> complex:
        if not self._has_exact_mp():
            return self.models[i].hprime0
        val, _ = self.hprime_limit_mp(i, 30)
        return complex(val)

    def hprime_limit_mp(self, i: int, dps: int):
        """h'(0) as the limit of 1/(Phi(Z) e^{2iZ}), extrapolated in 1/Z; (value, error estimate)."""
        key = ("hp", i, dps)
        if key in self._mp_anchor:
            return self._mp_anchor[key]
        k = self.models[i].k
        heights = [30.0 * 2 ** n for n in range(5)]
        ws, qs = [], []
        x = 0.25
        for y in heights:
            work = dps + int(2 * y / math.log(10)) + 25
            with mpmath.workdps(work):
                Z = mpmath.mpc(x, y)
                z = self._mp_chart_inverse(i, Z)
                phi = self.f.mp_iterate(z, k + 1, work)
                qs.append(1 / (phi * mpmath.exp(2j * Z)))
                ws.append(1 / Z)
        with mpmath.workdps(dps + 10):
            def neville(pts):
                p = [q for _, q in pts]
                w = [t for t, _ in pts]
                n = len(p)
                for m in range(1, n):
                    for t in range(n - m):
                        p[t] = (w[t + m] * p[t] - w[t] * p[t + 1]) / (w[t + m] - w[t])
                return p[0]
            pts = list(zip(ws, qs))
            best = neville(pts)
            prev = neville(pts[1:])
            err = float(abs(best - prev)) * 10 + 10.0 ** (-dps + 5)
        self._mp_anchor[key] = (best, err)
        return best, err

    def _fit_lg_constant(self, i: int, safety: float = 1.5) -> float:
        """Largest |Z| |Phi/Phi_model - 1| over a grid of tract heights, times a safety factor."""
        mdl = self.models[i]
        c = self.system.c
        worst = 0.0
        xs = self._x0[i] + np.linspace(0, math.pi, 7, endpoint=False)
        for y in (c + 2, c + 4, c + 8, c + 16):
            for x in xs:
                Z = complex(x, y)
                L = complex(mdl.log_phi_array(np.array([Z]))[0]) + self._shift[i]
                if self._has_exact_mp():
                    with mpmath.workdps(40):
                        z = self._mp_chart_inverse(i, mpmath.mpc(Z))
                        w = complex(mpmath.log(self.f.mp_iterate(z, mdl.k + 1, 40)))
                else:
                    from .tract_models import iterate_near
                    z = self.charts[i].inverse(Z)
                    w = cmath.log(iterate_near(self.f, complex(self.f(z)), mdl.k))
                d = w - L
                d = complex(d.real, float(wrap_angle(d.imag)))
                worst = max(worst, abs(cmath.exp(d) - 1) * abs(Z))
        return safety * worst

    def lg_error(self, i: int, abs_Z) -> np.ndarray:
        return self.lg_constant[i] / np.asarray(abs_Z, dtype=float)

    # --- geometry
    def anchor(self, i: int, j: int) -> float:
        return self._x0[i] - j * math.pi / self.N

    def theta(self, j: int) -> float:
        return self.theta0 + 2 * math.pi * j / self.N

    def hor_bounds(self, k: int) -> tuple[TowerInterval, TowerInterval]:
        a = self.alpha
        return a[k] + a[k - 1] * 2.0, a[k + 1] - a[k] * 2.0

    def hor_bounds_float(self, k: int) -> tuple[float, float]:
        lo, hi = self.hor_bounds(k)
        lo_f = lo.lo.to_float() if lo.is_float() else math.inf
        hi_f = hi.hi.to_float() if hi.is_float() else math.inf
        return lo_f, hi_f

    def rect_margin(self, k: int) -> float:
        """3/(N alpha_k); 0.0 when alpha_k is beyond float range."""
        a = self.alpha.float_value(k)
        return 0.0 if math.isinf(a) else 3.0 / (self.N * a)

    def rect_x(self, i: int, j: int, k: int, n: int = 0) -> tuple[float, float]:
        d = self.rect_margin(k)
        return self.anchor(i, j + 1) + n * math.pi + d, self.anchor(i, j) + n * math.pi - d

    def square(self, i: int, m: int, n: int = 0) -> tuple[float, float, float, float]:
        x0 = self.anchor(i, self.N) + n * math.pi
        return x0, x0 + math.pi, m * math.pi, (m + 1) * math.pi

    def square_rows(self, k: int) -> range:
        """Row indices m whose squares lie inside Hor_k (float strips only)."""
        lo, hi = self.hor_bounds_float(k)
        if math.isinf(lo):
            raise PreconditionError("strip beyond float range")
        top = math.floor(hi / math.pi) if math.isfinite(hi) else math.ceil(lo / math.pi) + 64
        return range(math.ceil(lo / math.pi), top)

    def square_index(self, i: int, x: float, y: float) -> tuple[int, int]:
        u = x - self.anchor(i, self.N)
        return math.floor(y / math.pi), math.floor(u / math.pi)

    def rect_label(self, i: int, x, k: int):
        """Rectangle index j of Re Z = x in strip k (-1 in the separating gaps) and the square column n."""
        x = np.asarray(x, dtype=float)
        u = x - self.anchor(i, self.N)
        n = np.floor(u / math.pi)
        s = u - n * math.pi
        step = math.pi / self.N
        col = np.clip(np.floor(s / step), 0, self.N - 1)
        off = s - col * step
        d = self.rect_margin(k)
        inside = (off > d) & (off < step - d)
        j = np.where(inside, self.N - 1 - col, -1).astype(int)
        return j, n.astype(int)

    def strip_of(self, y) -> Location:
        yi = _interval(y)
        for k in range(-1, 12):
            lo, hi = self.hor_bounds(k) if k >= 0 else (TowerInterval.point(-math.inf), self.hor_bounds(0)[0])
            if k == -1:
                c = yi.cmp(hi)
                if c is Ordering.LESS:
                    return Location("below")
                if c is Ordering.INDETERMINATE:
                    return Location("boundary-uncertain", 0)
                continue
            c_lo, c_hi = yi.cmp(lo), yi.cmp(hi)
            if c_lo is Ordering.INDETERMINATE or c_hi is Ordering.INDETERMINATE:
                return Location("boundary-uncertain", k)
            if c_lo is Ordering.GREATER and c_hi is Ordering.LESS:
                return Location("strip", k)
            nxt = self.hor_bounds(k + 1)[0]
            c_n = yi.cmp(nxt)
            if c_hi is Ordering.GREATER and c_n is Ordering.LESS:
                return Location("gap", k)
            if c_n is Ordering.INDETERMINATE:
                return Location("boundary-uncertain", k + 1)
        raise PreconditionError("height beyond the tabulated strips")

    def locate(self, state: StripState) -> Location:
        loc = self.strip_of(state.y)
        if loc.kind != "strip" or state.x is None or not isinstance(state.y, float):
            return loc
        m, n = self.square_index(state.plane, state.x, state.y)
        j, _ = self.rect_label(state.plane, state.x, loc.k)
        return Location("strip", loc.k, (m, n), None if int(j) < 0 else int(j))

    # --- evaluation
    def log_psi(self, i: int, j: int, Z) -> np.ndarray:
        """log Psi_{i,j}(Z) for arrays of float Z in the upper tract of chart i."""
        log_phi = self.models[i].log_phi_array(Z) + self._shift[i]
        return self.charts[j].log_value_from_log(log_phi)

    def log_psi_true(self, i: int, j: int, Z, extra_dps: int = 20) -> np.ndarray:
        """log Psi through the function itself: the model when it is exact, else the mp route."""
        Z = np.asarray(Z, dtype=complex)
        if self.model_exact or not self._has_exact_mp():
            return self.log_psi(i, j, Z)
        est = self.log_psi(i, j, Z)
        out = np.empty(Z.shape, dtype=complex)
        for idx, (z, e) in enumerate(zip(Z.ravel(), est.ravel())):
            dps = self.mp_dps_for(e.real, extra_dps)
            with mpmath.workdps(dps):
                w = mpmath.log(self.psi_mp(i, j, z, dps))
            v = complex(w)
            # keep the branch of the float estimate
            out.ravel()[idx] = complex(v.real, e.imag + float(wrap_angle(v.imag - e.imag)))
        return out

    def psi_array(self, i: int, j: int, Z) -> np.ndarray:
        """Float Psi_{i,j}(Z); raises when the result would overflow."""
        Z = np.asarray(Z, dtype=complex)
        log_phi = self.models[i].log_phi_array(Z) + self._shift[i]
        if np.any(log_phi.real > MACHINE_LOG_LIMIT / max(1, self.N / 2)):
            raise OverflowError("Psi beyond float range; use log_psi")
        phi = np.exp(log_phi)
        if np.any(np.abs(phi) < 2 * self.charts[j].R):
            raise PreconditionError("Phi too close to the chart disk")
        ch = self.charts[j]
        rotated = phi * ch.rot
        if np.any(np.abs(np.angle(rotated)) >= math.pi - 1e-12):
            raise PreconditionError("Phi on the branch cut of chart j")
        return ch.value(phi, check=False)

    def dlog_psi(self, i: int, j: int, Z, h: float = 1e-5) -> np.ndarray:
        """d/dZ log Psi by central differences (log Psi is close to affine)."""
        Z = np.asarray(Z, dtype=complex)
        return (self.log_psi(i, j, Z + h) - self.log_psi(i, j, Z - h)) / (2 * h)

    def log_abs_dpsi(self, i: int, j: int, Z) -> np.ndarray:
        """-inf where the finite difference underflows (far out in float)."""
        with np.errstate(divide="ignore"):
            return self.log_psi(i, j, Z).real + np.log(np.abs(self.dlog_psi(i, j, Z)))

    def psi_direct(self, i: int, j: int, Z: complex) -> complex:
        """Psi through the function itself (independent of the tract model)."""
        from .tract_models import iterate_near
        z = self.charts[i].inverse(complex(Z))
        w = iterate_near(self.f, complex(self.f(z)), self.models[i].k)
        return complex(self.charts[j].value(w, check=False))

    def psi(self, i: int, j: int, state: StripState) -> tuple[StripState, str]:
        """One application of Psi_{i,j}; returns the new state and the regime used."""
        if state.plane != i:
            raise PreconditionError("state lives in a different plane")
        if _interval(state.y).cmp(self.alpha[0]) is not Ordering.GREATER:
            raise PreconditionError("psi needs Im Z > alpha_0")
        if isinstance(state.y, TowerInterval) and not state.y.is_float():
            return self._psi_tower(i, j, state), "tower"
        y = state.y.lo.to_float() if isinstance(state.y, TowerInterval) else float(state.y)
        if state.x is None:
            raise PreconditionError("Re Z is needed below tower heights")
        Z = complex(state.x, y)
        L = complex(self.log_psi(i, j, np.array([Z]))[0])
        s = math.sin(L.imag)
        eps = float(self.lg_error(i, abs(Z)))
        if eps >= 0.25:
            raise PreconditionError("tract model error too large at this height")
        # |log|1+e|| and |arg(1+e)| are <= 2e for |e| <= 1/2
        tol_log = self.N * eps * (1 + abs(math.cos(L.imag) / s) if s > 0 else math.inf)
        if L.real < MACHINE_LOG_LIMIT and tol_log < 1e-12:
            w = cmath.exp(L)
            return StripState(j, w.imag, w.real), "machine"
        if s <= 0:
            raise PreconditionError("image below the real axis of chart j")
        lg = L.real + math.log(s)
        tol = LOG_TOL * (1 + abs(lg)) * 1e-3 + LOG_TOL + tol_log
        x_new = cmath.exp(L).real if L.real < MACHINE_LOG_LIMIT else None
        return StripState(j, _log_to_tower(lg - tol, lg + tol), x_new), ("machine" if x_new is not None else "log")

    def _psi_tower(self, i: int, j: int, state: StripState) -> StripState:
        if state.x is None:
            raise PreconditionError("tower regime needs the float offset Re Z")
        # arg Psi = (N/2)(arg Phi - theta_j) up to tower-small corrections
        arg_phi = -cmath.phase(self.hprime[i]) - 2 * state.x
        a = (self.N / 2) * float(wrap_angle(arg_phi - self.theta(j)) % (2 * math.pi))
        s = math.sin(a)
        if s <= 1e-12:
            raise PreconditionError("image angle too close to the real axis")
        c = math.log(self.K) + (self.N / 2) * self.log_m[i] + math.log(s)
        # rho, the chart correction and the float angle error are tower-small
        # or below 1e-12 here; LOG_TOL covers them
        log_im = state.y * float(self.N) + (c - LOG_TOL)
        log_hi = state.y * float(self.N) + (c + LOG_TOL)
        return StripState(j, TowerInterval(log_im.lo, log_hi.hi).exp(), None)

    # --- high precision route
    def mp_dps_for(self, log_abs_psi: float, extra: int = 30) -> int:
        return int(log_abs_psi / math.log(10)) + extra

    def anchor_mp(self, i: int, dps: int):
        """Anchor x_0 of plane i at ``dps`` digits and an error bound, from the h'(0) limit."""
        key = ("x0", i, dps)
        if key not in self._mp_anchor:
            hp, err = self.hprime_limit_mp(i, dps)
            with mpmath.workdps(dps + 10):
                theta0 = self.charts[0].theta_mp()
                val = (-theta0 - mpmath.arg(hp)) / 2
                val += mpmath.pi * round(float((self._x0[i] - val) / mpmath.pi))
                aerr = err / float(abs(hp))
            self._mp_anchor[key] = (val, aerr)
        return self._mp_anchor[key]

    def _mp_chart_inverse(self, i: int, Z):
        """Z_i^{-1} at the current precision; the float seed is moved up from a safe height."""
        ch = self.charts[i]
        if ch.m == 0 and not ch.rho.size:
            return Z * mpmath.expj(ch.theta_mp()) + mpmath.mpf(ch.R) * mpmath.expj(ch.theta_mp())
        y = float(Z.imag)
        if y < 300:
            return ch.inverse_mp(Z)
        # leading-order seed from |Z| ~ K t^(N/2), then Newton
        lt = (mpmath.log(Z) - mpmath.log(ch.K)) * 2 / ch.N
        seed_t = mpmath.exp(lt)
        return ch.inverse_mp(Z, seed=seed_t * mpmath.expj(ch.theta_mp()))

    def psi_mp(self, i: int, j: int, Z, dps: int):
        """Psi_{i,j}(Z) through the function at ``dps`` digits (no tract model)."""
        with mpmath.workdps(dps):
            Z = mpmath.mpc(Z)
            z = self._mp_chart_inverse(i, Z)
            w = self.f.mp_iterate(z, self.models[i].k + 1, dps)
            return self.charts[j].value_mp(w)

    # --- tower constants for a whole rectangle
    def rect_constants(self, k: int, planes=None) -> "RectConstants":
        """Float and symbolic constants bounding Psi on every Rect_{j,k,n}."""
        planes = range(self.N) if planes is None else planes
        A = self.alpha
        N = self.N
        c = self.system.c
        y_lo = AlphaAffine(A, {k: 1.0, k - 1: 2.0})
        log_rho = AlphaAffine(A, {k: -2.0, k - 1: -4.0}, 2 * c)
        rho_hi = log_rho.exp_bounds()[1]
        if rho_hi >= 0.5:
            raise PreconditionError("strip too low: rho >= 1/2")
        log_m_lo = min(self.log_m[i] for i in planes)
        log_m_hi = max(self.log_m[i] for i in planes)
        B = max(e[0] for e in self._envelope)
        L0 = max(e[1] for e in self._envelope)
        # log|t| >= log m + 2 y + 2 log(1 - rho) and |S| <= B exp(-log|t|/2)
        log_t_lo = y_lo.scale(2.0) + (log_m_lo + 2 * math.log1p(-rho_hi))
        if not (log_t_lo - L0).is_positive():
            raise PreconditionError("strip too low for the chart correction bound")
        log_delta = log_t_lo.scale(-0.5) + math.log(B)
        delta_hi = log_delta.exp_bounds()[1]
        if delta_hi >= 0.5:
            raise PreconditionError("chart correction too large in this strip")
        # eps_theta <= (4 N rho + 2 delta) alpha_k / 3
        e1 = (log_rho + AlphaAffine(A, {k - 1: float(N)}, math.log(4 * N / 3))).exp_bounds()[1]
        e2 = (log_delta + AlphaAffine(A, {k - 1: float(N)}, math.log(2 / 3))).exp_bounds()[1]
        # Liouville-Green remainder: |e| <= C/|Z| <= C/alpha_k
        C = max(self.lg_constant)
        lg_hi = AlphaAffine(A, {k - 1: -float(N)}, math.log(C) if C > 0 else -745.0).exp_bounds()[1]
        if lg_hi >= 0.25:
            raise PreconditionError("tract model error too large in this strip")
        eps_theta = e1 + e2 + N * C / 3
        theta0_hi = 3.0 / A[k].lo.mantissa if A.is_float(k) else 0.0
        return RectConstants(k, y_lo, log_rho, rho_hi, delta_hi, eps_theta, theta0_hi, log_m_lo, log_m_hi, lg_hi)

    def strip_certificate(self, k: int) -> "StripCertificate":
        """Certify Psi(Rect_{j,k,n}) inside Hor_{k+1} for every j, n (tower arithmetic)."""
        A, N = self.alpha, self.N
        rc = self.rect_constants(k)
        if rc.eps_theta >= 1:
            return StripCertificate(k, Signed(0, None), Signed(0, None), rc.eps_theta, "angle correction too large")
        logK = math.log(self.K)
        lower_const = (logK + (N / 2) * rc.log_m_lo + N * math.log1p(-rc.rho_hi) + math.log1p(-rc.delta_hi)
                       + math.log(3) + math.log1p(-rc.eps_theta) + math.log1p(-rc.theta0_hi ** 2 / 6)
                       - N * 2 * rc.lg_hi)
        lower = rc.y_lo.scale(float(N)) + AlphaAffine(A, {k - 1: -float(N)}, lower_const)
        # log(alpha_{k+1} + 2 alpha_k) <= N alpha_k + 2 alpha_k / alpha_{k+1}
        x_hi = AlphaAffine(A, {k - 1: float(N), k: -float(N)}, math.log(2)).exp_bounds()[1]
        target_lo = AlphaAffine(A, {k: float(N)}, x_hi)
        lower_margin = (lower - target_lo).evaluate()
        y_hi = AlphaAffine(A, {k + 1: 1.0, k: -2.0})
        upper_const = (logK + (N / 2) * rc.log_m_hi + N * math.log1p(rc.rho_hi) + math.log1p(rc.delta_hi)
                       + N * 2 * rc.lg_hi)
        upper = y_hi.scale(float(N)) + upper_const
        # log(alpha_{k+2} - 2 alpha_{k+1}) >= N alpha_{k+1} - 2x for x = 2 alpha_{k+1}/alpha_{k+2} <= 1/2
        x2 = AlphaAffine(A, {k: float(N), k + 1: -float(N)}, math.log(2)).exp_bounds()[1]
        if x2 > 0.5:
            return StripCertificate(k, lower_margin, Signed(0, None), rc.eps_theta, "strip too thin")
        target_hi = AlphaAffine(A, {k + 1: float(N)}, -2 * x2)
        upper_margin = (target_hi - upper).evaluate()
        return StripCertificate(k, lower_margin, upper_margin, rc.eps_theta, "")


def gap_step_certificate(lattice: StripLattice, s: int) -> "GapCertificate":
    """If Z, Z' lie in rectangles of Hor_s with Im Z - Im Z' >= 2 alpha_{s-1},
    then Im Psi(Z) - Im Psi(Z') >= 2 alpha_s (tower arithmetic)."""
    A, N = lattice.alpha, lattice.N
    rc = lattice.rect_constants(s)
    strip = lattice.strip_certificate(s)
    if rc.eps_theta >= 1:
        return GapCertificate(s, Signed(0, None), Signed(0, None), strip.ok)
    const = ((N / 2) * (rc.log_m_lo - rc.log_m_hi) + N * (math.log1p(-rc.rho_hi) - math.log1p(rc.rho_hi))
             + math.log1p(-rc.delta_hi) - math.log1p(rc.delta_hi) + math.log(3)
             + math.log1p(-rc.eps_theta) + math.log1p(-rc.theta0_hi ** 2 / 6) - 4 * N * rc.lg_hi)
    # N * (gap >= 2 alpha_{s-1}) plus log sin(arg) >= log 3 - N alpha_{s-1} + ...
    ratio = AlphaAffine(A, {s - 1: 2.0 * N}) + AlphaAffine(A, {s - 1: -float(N)}, const)
    r = ratio.evaluate()
    if r.sign <= 0:
        return GapCertificate(s, r, Signed(0, None), strip.ok)
    e = (-ratio).exp_bounds()[1]
    if e >= 1:
        return GapCertificate(s, r, Signed(0, None), strip.ok)
    # Im Psi(Z) - Im Psi(Z') >= alpha_{s+1} (1 - e) >= 2 alpha_s
    margin = AlphaAffine(A, {s: float(N), s - 1: -float(N)}, -math.log(2) + math.log1p(-e)).evaluate()
    return GapCertificate(s, r, margin, strip.ok)


@dataclass
class GapCertificate:
    s: int
    log_ratio: Signed  # log Im Psi(Z) - log Im Psi(Z'), lower bound
    margin: Signed  # log(new gap) - log(2 alpha_s), lower bound
    strip_ok: bool

    @property
    def ok(self) -> bool:
        return self.log_ratio.sign > 0 and self.margin.sign > 0 and self.strip_ok


@dataclass
class MonotoneReport:
    k: int
    pairs: int
    violations: int
    min_log_margin: float
    certificate: GapCertificate

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.certificate.ok


def verify_vertical_monotone(lattice: StripLattice, k: int = 0, count: int = 500, seed: int = 3) -> MonotoneReport:
    """Sampled pairs in rectangles of Hor_k with y2 >= y1 + 2 alpha_{k-1}: Im Psi(Z2) >= Im Psi(Z1) + 2 alpha_{k+1}."""
    rng = np.random.default_rng(seed)
    N = lattice.N
    g = 2 * lattice.alpha[k - 1].hi.mantissa
    target = 2 * lattice.alpha[k + 1]
    lo, hi = lattice.hor_bounds_float(k)
    if not (math.isfinite(lo) and math.isfinite(g)):
        raise PreconditionError("monotonicity is sampled in float-indexed strips")
    hi = min(hi, lo + 300.0)
    if hi - g <= lo:
        raise PreconditionError("strip too thin for the sampled height gap")
    viol, worst, pairs = 0, math.inf, 0
    for _ in range(count):
        i, j1, j2 = (int(v) for v in rng.integers(0, N, 3))
        y1 = rng.uniform(lo, hi - g)
        y2 = rng.uniform(y1 + g, hi)
        x1 = rng.uniform(*lattice.rect_x(i, j1, k))
        x2 = rng.uniform(*lattice.rect_x(i, j2, k))
        L1 = complex(lattice.log_psi(i, j1, np.array([complex(x1, y1)]))[0])
        L2 = complex(lattice.log_psi(i, j2, np.array([complex(x2, y2)]))[0])
        a = L2.real + math.log(math.sin(L2.imag))
        b = L1.real + math.log(math.sin(L1.imag))
        if a <= b:
            viol += 1
            continue
        # log(Im2 - Im1) = a + log(1 - e^{b-a})
        lg = a + math.log(-math.expm1(b - a))
        diff = _log_to_tower(lg - LOG_TOL, lg + LOG_TOL)
        pairs += 1
        if diff.cmp(target) is not Ordering.GREATER:
            viol += 1
        tl = math.log(target.hi.to_float()) if target.is_float() else math.inf
        worst = min(worst, lg - tl)
    return MonotoneReport(k, pairs, viol, worst, gap_step_certificate(lattice, k))


@dataclass
class RectConstants:
    k: int
    y_lo: AlphaAffine
    log_rho: AlphaAffine
    rho_hi: float
    delta_hi: float
    eps_theta: float
    theta0_hi: float
    log_m_lo: float
    log_m_hi: float
    lg_hi: float = 0.0  # bound on the tract-model remainder |e|


@dataclass
class StripCertificate:
    k: int
    lower_margin: Signed  # log Im Psi - log(alpha_{k+1} + 2 alpha_k), worst case
    upper_margin: Signed  # log(alpha_{k+2} - 2 alpha_{k+1}) - log Im Psi, worst case
    eps_theta: float
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.lower_margin.sign > 0 and self.upper_margin.sign > 0

    def describe(self) -> dict:
        def show(s: Signed):
            return "undetermined" if s.sign == 0 else ("+" if s.sign > 0 else "-") + str(s.magnitude.lo)
        return {"k": self.k, "lower_margin": show(self.lower_margin), "upper_margin": show(self.upper_margin),
                "eps_theta": self.eps_theta, "ok": self.ok, "note": self.note}


# ---------------------------------------------------------------- sampling


def rect_samples(lattice: StripLattice, i: int, j: int, k: int, count: int, rng: np.random.Generator,
                 n: int = 0, y_cap: float = 1e6, edges: bool = True) -> np.ndarray:
    """Points of Rect_{j,k,n} in plane i, heights log-uniform, edges included."""
    xl, xr = lattice.rect_x(i, j, k, n)
    lo, hi = lattice.hor_bounds_float(k)
    hi = min(hi, y_cap)
    ys = np.exp(rng.uniform(math.log(lo), math.log(hi), count))
    xs = rng.uniform(xl, xr, count)
    if edges:
        q = max(1, count // 8)
        xs[:q] = xl
        xs[q:2 * q] = xr
        ys[2 * q] = lo
        ys[2 * q + 1] = hi
    return xs + 1j * ys


# ---------------------------------------------------------------- angle bounds


@dataclass
class AngleReport:
    k: int
    mode: str  # "machine" or "symbolic"
    samples: int
    violations: int
    min_scaled_margin: float  # min over samples of alpha_k * arg-distance to the real axis
    edge_scaled_margin: float  # alpha_k * (arg Phi distance to the critical rays) on rect edges, times N
    rows: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def verify_angle_lemma(lattice: StripLattice, k: int, count: int = 400, seed: int = 0) -> AngleReport:
    """arg Psi_{i,j} in [2/alpha_k, pi - 2/alpha_k] on Rect_{j,k,n} (and the edge-line bounds)."""
    N = lattice.N
    y_cap = 1e6 if lattice.model_exact else 60.0
    if lattice.rect_margin(k) == 0.0 or not lattice.alpha.is_float(k) or lattice.hor_bounds_float(k)[0] >= y_cap:
        rc = lattice.rect_constants(k)
        # arg Psi >= (3/alpha_k)(1 - eps_theta) >= 2/alpha_k iff eps_theta <= 1/3
        viol = 0 if rc.eps_theta <= 1 / 3 else 1
        return AngleReport(k, "symbolic", 0, viol, 3 * (1 - rc.eps_theta), 6 * (1 - rc.eps_theta))
    if 2 * lattice.rect_margin(k) >= math.pi / N:
        raise PreconditionError(f"rectangles of Hor_{k} are empty at this alpha_0")
    rng = np.random.default_rng(seed)
    a_k = lattice.alpha.float_value(k)
    viol, total = 0, 0
    min_m, edge_m = math.inf, math.inf
    rows = []
    for i in range(N):
        for j in range(N):
            Z = rect_samples(lattice, i, j, k, count, rng, y_cap=y_cap)
            L = lattice.log_psi_true(i, j, Z)
            arg = L.imag
            margin = np.minimum(arg, math.pi - arg) * a_k
            viol += int(np.sum(margin < 2.0))
            total += Z.size
            min_m = min(min_m, float(margin.min()))
            # edge lines: arg Phi stays 4/(N alpha_k) away from theta_j and theta_{j+1}
            xl, xr = lattice.rect_x(i, j, k)
            ys = Z.imag[: max(4, count // 8)]
            for xe in (xl, xr):
                Le = lattice.models[i].log_phi_array(xe + 1j * ys)
                d = wrap_angle(Le.imag - lattice.theta(j))
                d = np.where(d < 0, d + 2 * math.pi, d)
                dist = np.minimum(d, 2 * math.pi / N - d) * N * a_k
                viol += int(np.sum(dist < 4.0))
                edge_m = min(edge_m, float(dist.min()))
            rows.append({"plane": i, "rect": j, "min_scaled_margin": float(margin.min())})
    return AngleReport(k, "machine", total, viol, min_m, edge_m, rows)


def empirical_N0(lattice: StripLattice, k_max: int = 5, count: int = 200, seed: int = 0) -> tuple[int, list]:
    """Smallest k0 such that the angle bounds hold at every scanned k >= k0."""
    reports = []
    for k in range(k_max + 1):
        try:
            reports.append(verify_angle_lemma(lattice, k, count, seed))
        except PreconditionError:
            reports.append(AngleReport(k, "empty", 0, 1, -math.inf, -math.inf))
    bad = [r.k for r in reports if not r.ok]
    return (max(bad) + 1 if bad else 0), reports


# ---------------------------------------------------------------- strip mapping


@dataclass
class StripMappingReport:
    k: int
    mode: str
    samples: int
    contained: int
    uncertain: int
    certificate: StripCertificate | None = None
    failures: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        cert_ok = self.certificate is None or self.certificate.ok
        return self.contained == self.samples and cert_ok


def verify_strip_mapping(lattice: StripLattice, k: int, count: int = 200, seed: int = 1) -> StripMappingReport:
    """Psi(Rect_{j,k,n}) lies in Hor_{k+1}: boundary samples where representable, plus the certificate."""
    cert = lattice.strip_certificate(k)
    if not lattice.alpha.is_float(k) or lattice.rect_margin(k) == 0.0:
        return StripMappingReport(k, "tower", 0, 0, 0, cert)
    rng = np.random.default_rng(seed)
    N = lattice.N
    total = ok = unc = 0
    fails = []
    lo_k, hi_k = lattice.hor_bounds(k)
    for i in range(N):
        for j in range(N):
            xl, xr = lattice.rect_x(i, j, k)
            states = []
            xs = np.concatenate([[xl, xr], rng.uniform(xl, xr, max(1, count // 4))])
            lo_f, hi_f = lattice.hor_bounds_float(k)
            # the top edge is sampled only when it is a float; a tower top edge
            # cannot be separated from Hor_{k+2} pointwise and is covered by the certificate
            for x in xs:
                states.append(StripState(i, lo_f, float(x)))
                if math.isfinite(hi_f):
                    states.append(StripState(i, hi_f, float(x)))
            Z = rect_samples(lattice, i, j, k, count, rng)
            states += [StripState(i, float(z.imag), float(z.real)) for z in Z]
            for st in states:
                new, regime = lattice.psi(i, j, st)
                loc = lattice.strip_of(new.y)
                total += 1
                if loc.kind == "strip" and loc.k == k + 1:
                    ok += 1
                else:
                    unc += loc.kind == "boundary-uncertain"
                    if len(fails) < 20:
                        fails.append({"x": st.x, "y": str(st.y), "regime": regime, "located": loc.kind, "k": loc.k})
    return StripMappingReport(k, "machine", total, ok, unc, cert, fails)


# ---------------------------------------------------------------- expansion


@dataclass
class ExpansionReport:
    k: int
    samples: int
    min_log_ratio: float  # min of log|Psi'| - log(alpha_k / (4 pi)) over samples with image in Hor_k
    richardson_gap: float
    monotone: bool

    @property
    def ok(self) -> bool:
        return self.samples > 0 and self.min_log_ratio >= 0 and self.monotone


def verify_expansion(lattice: StripLattice, k: int = 1, count: int = 1000, seed: int = 2) -> ExpansionReport:
    """|Psi'(Z)| >= alpha_k/(4 pi) at sampled Z whose image lies in Hor_k."""
    if k < 1 or not lattice.alpha.is_float(k):
        raise PreconditionError("expansion is sampled for images in float-indexed strips")
    rng = np.random.default_rng(seed)
    N = lattice.N
    bound = math.log(lattice.alpha[k].lo.mantissa / (4 * math.pi)) if lattice.alpha.is_float(k) \
        else None
    lo_img, hi_img = lattice.hor_bounds(k)
    min_ratio, rich, kept = math.inf, 0.0, 0
    per = max(1, count // (N * N))
    for i in range(N):
        for j in range(N):
            Z = rect_samples(lattice, i, j, k - 1, per, rng, y_cap=300.0, edges=False)
            L = lattice.log_psi(i, j, Z)
            img_log_im = L.real + np.log(np.sin(L.imag))
            d1 = lattice.dlog_psi(i, j, Z, 1e-5)
            d2 = lattice.dlog_psi(i, j, Z, 5e-6)
            rich = max(rich, float(np.max(np.abs(d1 - d2) / np.abs(d2))))
            logd = L.real + np.log(np.abs(d2))
            for li, ld in zip(img_log_im, logd):
                y_img = _log_to_tower(li - LOG_TOL, li + LOG_TOL)
                if y_img.cmp(lo_img) is not Ordering.GREATER or y_img.cmp(hi_img) is not Ordering.LESS:
                    continue
                kept += 1
                b = bound if bound is not None else (math.log(lattice.alpha.float_value(k)) - math.log(4 * math.pi))
                min_ratio = min(min_ratio, float(ld - b))
    # monotone growth along a vertical line
    x = 0.5 * sum(lattice.rect_x(0, 0, k - 1))
    lo, hi = lattice.hor_bounds_float(k - 1)
    ys = np.linspace(lo, min(hi, 300.0), 200)
    g = lattice.log_abs_dpsi(0, 0, x + 1j * ys)
    return ExpansionReport(k, kept, min_ratio, rich, bool(np.all(np.diff(g) > 0)))


# ---------------------------------------------------------------- pullbacks


@dataclass
class PullbackResult:
    plane: int
    square: tuple[int, int]
    k: int
    mode: str  # "exact" or "band"
    resolution: int
    rect_fraction: dict  # j -> fraction of grid points in Rect_j
    certified_fraction: dict  # j -> fraction of grid points certified in P^j
    leftover: float  # 1 - total certified fraction
    bound: float  # LEFTOVER_CONSTANT / alpha_k
    image_squares: dict = field(default_factory=dict, repr=False)  # j -> sorted unique (m', n')
    polygons: dict = field(default_factory=dict, repr=False)  # j -> Psi(boundary of Rect_j)
    gap_check: dict = field(default_factory=dict)  # j -> max distance from boundary to U^j

    @property
    def ok(self) -> bool:
        return self.leftover <= self.bound


def _newton_pullback(lattice: StripLattice, i: int, j: int, Z0: np.ndarray, W: np.ndarray, iters: int = 8):
    """Solve Psi_{i,j}(Z) = W starting at Z0 (arrays of equal shape)."""
    Z = Z0.astype(complex).copy()
    for _ in range(iters):
        P = lattice.psi_array(i, j, Z)
        dP = P * lattice.dlog_psi(i, j, Z, 1e-6)
        Z = Z - (P - W) / dP
    res = np.abs(lattice.psi_array(i, j, Z) - W)
    return Z, res


def _lattice_square_of(lattice: StripLattice, j: int, W: np.ndarray):
    u = W.real - lattice.anchor(j, lattice.N)
    return np.floor(W.imag / math.pi).astype(np.int64), np.floor(u / math.pi).astype(np.int64)


def _square_boundary(lattice: StripLattice, j: int, m, n, per_edge: int = 3) -> np.ndarray:
    """Points on the boundary of lattice squares (m, n) of plane j; shape (..., 4*per_edge)."""
    x0 = lattice.anchor(j, lattice.N) + np.asarray(n) * math.pi
    y0 = np.asarray(m) * math.pi
    t = np.arange(per_edge) / per_edge
    pts = np.concatenate([t, 1 + 1j * t, (1 - t) + 1j, 1j * (1 - t)]) * math.pi
    return (x0 + 1j * y0)[..., None] + pts


def pullback_quads(lattice: StripLattice, i: int, m: int, n: int = 0, k: int | None = None,
                   mode: str = "band", resolution: int = 512, keep_squares: int = 64,
                   gap_samples: int = 32) -> PullbackResult:
    """Grid classification of a square S of plane i into the pulled-back regions P^j(S).

    ``band`` certifies a point when a Koebe quarter disk around it covers the
    whole lattice square of its image; ``exact`` pulls back the corners of that
    square with Newton's method (needs Psi in float range with error << pi).
    """
    x0, x1, y0, y1 = lattice.square(i, m, n)
    if k is None:
        loc = lattice.strip_of(y0)
        if loc.kind != "strip" or lattice.strip_of(y1).k != loc.k:
            raise PreconditionError("square not inside a single strip")
        k = loc.k
    s = (np.arange(resolution) + 0.5) / resolution
    X, Y = np.meshgrid(x0 + s * math.pi, y0 + s * math.pi)
    Zg = (X + 1j * Y).ravel()
    total = Zg.size
    rect_frac, cert_frac, squares, polys, gaps = {}, {}, {}, {}, {}
    certified_total = 0
    for j in range(lattice.N):
        xl, xr = lattice.rect_x(i, j, k, n)
        inside = (Zg.real > xl) & (Zg.real < xr)
        Z = Zg[inside]
        rect_frac[j] = float(inside.sum()) / total
        if mode == "band":
            dist = np.minimum.reduce([Z.real - xl, xr - Z.real, Z.imag - y0, y1 - Z.imag])
            logd = lattice.log_abs_dpsi(i, j, Z)
            ok = np.log(dist) + logd - math.log(4) > math.log(SQRT2PI)
        elif mode == "exact":
            W = lattice.psi_array(i, j, Z)
            mm, nn = _lattice_square_of(lattice, j, W)
            B = _square_boundary(lattice, j, mm, nn)
            Z0 = np.broadcast_to(Z[:, None], B.shape)
            Zb, res = _newton_pullback(lattice, i, j, Z0, B)
            ok = np.all((Zb.real > xl) & (Zb.real < xr) & (Zb.imag > y0) & (Zb.imag < y1) & (res < 1e-6), axis=1)
            uniq = sorted(set(zip(mm[ok].tolist(), nn[ok].tolist())))
            step = max(1, len(uniq) // keep_squares)
            squares[j] = uniq[::step][:keep_squares]
            polys[j] = _image_polygon(lattice, i, j, xl, xr, y0, y1)
            gaps[j] = _boundary_gap(lattice, i, j, (xl, xr, y0, y1), gap_samples)
        else:
            raise ValueError("mode must be 'band' or 'exact'")
        cert_frac[j] = float(ok.sum()) / total
        certified_total += int(ok.sum())
    a_k = lattice.alpha.float_value(k)
    return PullbackResult(i, (m, n), k, mode, resolution, rect_frac, cert_frac,
                          1 - certified_total / total, LEFTOVER_CONSTANT / a_k, squares, polys, gaps)


def _image_polygon(lattice, i, j, xl, xr, y0, y1, per_edge: int = 4096) -> np.ndarray:
    t = np.linspace(0, 1, per_edge, endpoint=False)
    edge = np.concatenate([xl + (xr - xl) * t + 1j * y0, xr + 1j * (y0 + (y1 - y0) * t),
                           xr - (xr - xl) * t + 1j * y1, xl + 1j * (y1 - (y1 - y0) * t)])
    return lattice.psi_array(i, j, edge)


def points_in_polygon(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over the points."""
    px, py = poly.real, poly.imag
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    x, y = pts.real[:, None], pts.imag[:, None]
    cond = (py[None, :] > y) != (qy[None, :] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = px + (y - py) * (qx - px) / (qy - py)
    return np.sum(cond & (x < xint), axis=1) % 2 == 1


def _boundary_gap(lattice, i, j, rect, samples: int) -> float:
    """Max over boundary samples b of Psi(R) of dist(b, U^j), searching nearby lattice squares."""
    xl, xr, y0, y1 = rect
    rng = np.random.default_rng(7)
    # sample the four sides away from the corners
    t = rng.uniform(0.1, 0.9, samples)
    side = np.arange(samples) % 4
    Zb = np.where(side == 0, xl + (xr - xl) * t + 1j * y0,
         np.where(side == 1, xr + 1j * (y0 + (y1 - y0) * t),
         np.where(side == 2, xl + (xr - xl) * t + 1j * y1, xl + 1j * (y0 + (y1 - y0) * t))))
    worst = 0.0
    for zb in Zb:
        b = complex(lattice.psi_array(i, j, np.array([zb]))[0])
        m0, n0 = _lattice_square_of(lattice, j, np.array([b]))
        best = math.inf
        offs = [(dm, dn) for dm in range(-3, 4) for dn in range(-3, 4)]
        mm = np.array([m0[0] + a for a, _ in offs])
        nn = np.array([n0[0] + c for _, c in offs])
        B = _square_boundary(lattice, j, mm, nn)
        Zp, res = _newton_pullback(lattice, i, j, np.full(B.shape, zb), B)
        inside = np.all((Zp.real > xl) & (Zp.real < xr) & (Zp.imag > y0) & (Zp.imag < y1) & (res < 1e-6), axis=1)
        x_left = lattice.anchor(j, lattice.N) + nn * math.pi
        for q in np.nonzero(inside)[0]:
            dx = max(x_left[q] - b.real, 0.0, b.real - (x_left[q] + math.pi))
            dy = max(mm[q] * math.pi - b.imag, 0.0, b.imag - (mm[q] + 1) * math.pi)
            best = min(best, math.hypot(dx, dy))
        worst = max(worst, best)
    return worst
