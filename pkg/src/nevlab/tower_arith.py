"""Iterated-exponential ("tower") numbers with outward rounding.

A :class:`TowerReal` with depth ``d`` and mantissa ``v`` stands for
``exp(exp(...exp(v)))`` with ``d`` exponentials.  Depth-0 values are
ordinary floats (any sign); deeper values are always positive.  The
canonical form is unique:

* depth 0 and ``v < TOP`` (``TOP`` is a few ulps above ``e**700``), or
* depth ``d >= 1`` and ``PROMOTE_FLOOR <= v < TOP``.

Every operation takes an ``up`` flag and returns a bound rounded in that
direction.  :class:`TowerInterval` pairs a lower and an upper bound and
propagates them endpoint-wise, so results are enclosures.

When a bounded quantity is added to a deep tower, its contribution lies
far below one ulp of the mantissa.  It is absorbed by widening the upper
endpoint by one mantissa ulp, which always over-covers it.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

PROMOTE_FLOOR = 700.0
TOP = math.exp(PROMOTE_FLOOR)
for _ in range(4):
    TOP = math.nextafter(TOP, math.inf)
TINY = 5e-324


def _step(x: float, up: bool, n: int = 1) -> float:
    target = math.inf if up else -math.inf
    for _ in range(n):
        x = math.nextafter(x, target)
    return x


def _exp(x: float, up: bool) -> float:
    if x == -math.inf:
        return TINY if up else 0.0
    return max(_step(math.exp(x), up, 2), 0.0)


def _log(x: float, up: bool) -> float:
    if x <= 0.0:
        if x == 0.0:
            return -math.inf
        raise ValueError("log of a negative number")
    return _step(math.log(x), up, 2)


@functools.total_ordering
@dataclass(frozen=True)
class TowerReal:
    depth: int
    mantissa: float

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if math.isnan(self.mantissa):
            raise ValueError("mantissa is NaN")
        if self.depth == 0:
            if self.mantissa >= TOP:
                raise ValueError("depth-0 mantissa above the promotion threshold")
        elif not PROMOTE_FLOOR <= self.mantissa < TOP:
            raise ValueError(f"non-canonical mantissa {self.mantissa!r} at depth {self.depth}")

    @classmethod
    def of(cls, x: float, up: bool = False) -> "TowerReal":
        """Canonical tower form of a float (promoting above ``TOP``)."""
        x = float(x)
        if x >= TOP:
            if x == math.inf:
                raise OverflowError("cannot represent +inf")
            return _make(1, max(_log(x, up), PROMOTE_FLOOR), up)
        return cls(0, x)

    def __lt__(self, other: "TowerReal") -> bool:
        return (self.depth, self.mantissa) < (other.depth, other.mantissa)

    def is_float(self) -> bool:
        return self.depth == 0

    def to_float(self) -> float:
        return self.mantissa if self.depth == 0 else math.inf

    def next_up(self) -> "TowerReal":
        return _make(self.depth, _step(self.mantissa, True), True)

    def next_down(self) -> "TowerReal":
        return _make(self.depth, _step(self.mantissa, False), False)

    def __str__(self) -> str:
        return f"E^{self.depth}({self.mantissa:.10g})"


ZERO = TowerReal(0, 0.0)
NEG_INF = TowerReal(0, -math.inf)


def _make(depth: int, v: float, up: bool) -> TowerReal:
    """Canonicalize (depth, v), demoting shallow mantissas and promoting large ones."""
    while depth >= 1 and v < PROMOTE_FLOOR:
        v = _exp(v, up)
        depth -= 1
    if depth == 0 and v >= TOP:
        if v == math.inf:
            raise OverflowError("float overflow while forming a tower")
        return _make(1, max(_log(v, up), PROMOTE_FLOOR), up)
    if depth >= 1 and v >= TOP:
        # only reachable through rounding at the very top of a mantissa range
        return _make(depth + 1, max(_log(v, up), PROMOTE_FLOOR), up)
    return TowerReal(depth, v)


def _as_tower(x) -> TowerReal:
    return x if isinstance(x, TowerReal) else TowerReal.of(x)


def tower_exp(x, up: bool = False) -> TowerReal:
    x = _as_tower(x)
    if x.depth >= 1:
        return TowerReal(x.depth + 1, x.mantissa)
    if x.mantissa >= PROMOTE_FLOOR:
        return TowerReal(1, x.mantissa)
    return _make(0, _exp(x.mantissa, up), up)


def tower_log(x, up: bool = False) -> TowerReal:
    x = _as_tower(x)
    if x.depth >= 2:
        return TowerReal(x.depth - 1, x.mantissa)
    if x.depth == 1:
        return TowerReal(0, x.mantissa)
    if x.mantissa <= 0.0:
        if x.mantissa == 0.0:
            return NEG_INF
        raise ValueError("tower_log requires a positive value")
    return TowerReal(0, _log(x.mantissa, up))


def tower_add(x, y, up: bool = False) -> TowerReal:
    """x + y, rounded in the requested direction."""
    x, y = _as_tower(x), _as_tower(y)
    if x.depth == 0 and y.depth == 0:
        s = x.mantissa + y.mantissa
        return _make(0, _step(s, up) if math.isfinite(s) else s, up)
    big, small = (x, y) if y <= x else (y, x)
    if big.depth >= 2 and small.depth == 0:
        return _absorb(big, small.mantissa, up)
    if small.depth == 0 and small.mantissa <= 0.0:
        if small.mantissa == 0.0:
            return big
        return tower_sub(big, TowerReal(0, -small.mantissa), up)
    return _add_towers(big, small, up)


def _absorb(big: TowerReal, b: float, up: bool) -> TowerReal:
    """big + b for a float b and depth >= 2: far below one mantissa ulp."""
    if b == 0.0:
        return big
    if up:
        return big.next_up() if b > 0 else big
    return big if b > 0 else big.next_down()


def _add_towers(big: TowerReal, small: TowerReal, up: bool) -> TowerReal:
    # log(b + s) = log b + log1p(exp(log s - log b))
    lb_lo, lb_hi = tower_log(big, False), tower_log(big, True)
    ls = tower_log(small, up)
    gap = tower_sub(lb_lo if up else lb_hi, ls, not up)
    e = _exp_neg(gap, up)
    d = _step(math.log1p(e), up, 2)
    return tower_exp(tower_add(lb_hi if up else lb_lo, TowerReal(0, max(d, 0.0)), up), up)


def _exp_neg(gap: TowerReal, up: bool) -> float:
    """exp(-gap) as a float for gap >= 0, rounded."""
    if gap.depth >= 1:
        return TINY if up else 0.0
    g = gap.mantissa
    if g <= 0.0:
        return 1.0
    return min(_exp(-g, up), 1.0)


def tower_sub(x, y, up: bool = False) -> TowerReal:
    """x - y.  Negative tower results are not representable: the lower bound
    degrades to -inf and the upper bound to 0 (both valid enclosures)."""
    x, y = _as_tower(x), _as_tower(y)
    if x.depth == 0 and y.depth == 0:
        s = x.mantissa - y.mantissa
        return _make(0, _step(s, up) if math.isfinite(s) else s, up)
    if y.depth == 0 and y.mantissa <= 0.0:
        return tower_add(x, TowerReal(0, -y.mantissa), up)
    if x.depth >= 2 and y.depth == 0:
        return _absorb(x, -y.mantissa, up)
    if x < y:
        return ZERO if up else NEG_INF
    if x.depth == 0:
        # x finite and x >= y but y is a tower: impossible by ordering
        raise AssertionError("unreachable")
    # x - y = x * (1 - exp(log y - log x))
    lx_lo, lx_hi = tower_log(x, False), tower_log(x, True)
    ly = tower_log(y, not up)
    if ly.depth == 0 and ly.mantissa == -math.inf:
        return x
    gap = tower_sub(lx_hi if up else lx_lo, ly, up)
    if gap.depth == 0 and gap.mantissa <= 0.0:
        return ZERO if up else NEG_INF
    e = _exp_neg(gap, not up)
    if e >= 1.0:
        return ZERO if up else NEG_INF
    d = _step(math.log1p(-e), up, 2)
    base = lx_hi if up else lx_lo
    if d >= 0.0:
        return tower_exp(base, up)
    shifted = tower_sub(base, TowerReal(0, -d), up)
    if shifted.depth == 0 and shifted.mantissa == -math.inf:
        return NEG_INF
    return tower_exp(shifted, up)


def tower_add_bounded(x, b: float, up: bool = False) -> TowerReal:
    """x + b for a float b; absorbed into one mantissa ulp when x is deep."""
    return tower_add(x, TowerReal(0, float(b)), up)


def tower_mul(x, y, up: bool = False) -> TowerReal:
    """Product of two non-negative values."""
    x, y = _as_tower(x), _as_tower(y)
    if x.depth == 0 and y.depth == 0:
        p = x.mantissa * y.mantissa
        if math.isfinite(p) and abs(p) < TOP:
            return _make(0, _step(p, up), up)
    if x.mantissa < 0 and x.depth == 0 or y.mantissa < 0 and y.depth == 0:
        raise ValueError("tower_mul supports non-negative operands only")
    if x == ZERO or y == ZERO:
        return ZERO
    return tower_exp(tower_add(tower_log(x, up), tower_log(y, up), up), up)


def tower_pow(x, p: float, up: bool = False) -> TowerReal:
    """x**p for x > 0 and p > 0."""
    if p <= 0:
        raise ValueError("exponent must be positive")
    x = _as_tower(x)
    if x.depth == 0:
        try:
            v = x.mantissa ** p
        except OverflowError:
            v = math.inf
        if math.isfinite(v) and v < TOP:
            return _make(0, _step(v, up, 2), up)
    lx = tower_log(x, up)
    if lx.depth == 0 and lx.mantissa < 0:
        return tower_exp(TowerReal(0, _step(lx.mantissa * p, up)), up)
    return tower_exp(tower_mul(lx, p, up), up)


class Ordering(enum.Enum):
    LESS = "less"
    GREATER = "greater"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class TowerInterval:
    lo: TowerReal
    hi: TowerReal

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError(f"inverted interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, x) -> "TowerInterval":
        if isinstance(x, TowerReal):
            return cls(x, x)
        return cls(TowerReal.of(x, False), TowerReal.of(x, True))

    @classmethod
    def between(cls, lo: float, hi: float) -> "TowerInterval":
        return cls(TowerReal.of(lo, False), TowerReal.of(hi, True))

    def __add__(self, other) -> "TowerInterval":
        o = _as_interval(other)
        return TowerInterval(tower_add(self.lo, o.lo, False), tower_add(self.hi, o.hi, True))

    __radd__ = __add__

    def __sub__(self, other) -> "TowerInterval":
        o = _as_interval(other)
        return TowerInterval(tower_sub(self.lo, o.hi, False), tower_sub(self.hi, o.lo, True))

    def __mul__(self, other) -> "TowerInterval":
        o = _as_interval(other)
        if self.lo.mantissa < 0 and self.lo.depth == 0 or o.lo.mantissa < 0 and o.lo.depth == 0:
            raise ValueError("interval product supports non-negative operands only")
        return TowerInterval(tower_mul(self.lo, o.lo, False), tower_mul(self.hi, o.hi, True))

    __rmul__ = __mul__

    def exp(self) -> "TowerInterval":
        return TowerInterval(tower_exp(self.lo, False), tower_exp(self.hi, True))

    def log(self) -> "TowerInterval":
        return TowerInterval(tower_log(self.lo, False), tower_log(self.hi, True))

    def pow(self, p: float) -> "TowerInterval":
        return TowerInterval(tower_pow(self.lo, p, False), tower_pow(self.hi, p, True))

    def cmp(self, other) -> Ordering:
        return tower_cmp(self, other)

    def contains(self, x) -> bool:
        x = _as_tower(x)
        return self.lo <= x <= self.hi

    def is_float(self) -> bool:
        return self.hi.depth == 0

    def __str__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


def _as_interval(x) -> TowerInterval:
    if isinstance(x, TowerInterval):
        return x
    return TowerInterval.point(x)


def tower_cmp(x, y) -> Ordering:
    """Three-valued comparison of two enclosures."""
    x, y = _as_interval(x), _as_interval(y)
    if x.hi < y.lo:
        return Ordering.LESS
    if x.lo > y.hi:
        return Ordering.GREATER
    return Ordering.INDETERMINATE


def alpha_enclosures(N: int, alpha0: float, k_max: int) -> list[TowerInterval]:
    """Enclosures of alpha_0..alpha_{k_max}, alpha_k = exp(N * alpha_{k-1})."""
    if alpha0 <= 0:
        raise ValueError("alpha0 must be positive")
    out = [TowerInterval.point(alpha0)]
    for _ in range(k_max):
        out.append((out[-1] * N).exp())
    return out


def alpha_sequence(N: int, alpha0: float, k_max: int) -> list[TowerReal]:
    """alpha_0..alpha_{k_max} as canonical tower values (nearest representative)."""
    if alpha0 <= 0:
        raise ValueError("alpha0 must be positive")
    out = [TowerReal.of(alpha0)]
    for _ in range(k_max):
        prev = out[-1]
        if prev.depth == 0 and N * prev.mantissa < PROMOTE_FLOOR:
            out.append(TowerReal.of(math.exp(N * prev.mantissa)))
            continue
        if prev.depth == 0:
            out.append(tower_exp(TowerReal.of(N * prev.mantissa)))
            continue
        # log(N * prev) = log N + log prev, nearest rounding through the mantissa
        log_prev = tower_log(prev)
        if log_prev.depth == 0:
            inner = TowerReal.of(math.log(N) + log_prev.mantissa)
        else:
            inner = tower_add(log_prev, TowerReal.of(math.log(N)))
        out.append(tower_exp(tower_exp(inner)))
    return out


class AlphaTable:
    """Cached enclosures of alpha_{-1}, alpha_0, alpha_1, ...

    alpha_{-1} is log(alpha_0)/N so that log(alpha_k) = N * alpha_{k-1}
    holds for every k >= 0.
    """

    def __init__(self, N: int, alpha0: float, k_max: int = 8):
        if alpha0 <= 1.0:
            raise ValueError("alpha0 must exceed 1")
        self.N = N
        self.alpha0 = float(alpha0)
        lo = _step(math.log(alpha0) / N, False, 2)
        hi = _step(math.log(alpha0) / N, True, 2)
        self._minus_one = TowerInterval.between(lo, hi)
        self._seq = alpha_enclosures(N, alpha0, k_max)

    def __getitem__(self, k: int) -> TowerInterval:
        if k < -1:
            raise IndexError("alpha index below -1")
        if k == -1:
            return self._minus_one
        while k >= len(self._seq):
            self._seq.append((self._seq[-1] * self.N).exp())
        return self._seq[k]

    def float_value(self, k: int) -> float:
        """Midpoint float of alpha_k (inf when beyond float range)."""
        a = self[k]
        if a.hi.depth > 0:
            return math.inf
        return 0.5 * (a.lo.mantissa + a.hi.mantissa)

    def is_float(self, k: int) -> bool:
        return self[k].hi.depth == 0


@dataclass(frozen=True)
class Signed:
    """A certified sign with an enclosure of the magnitude."""

    sign: int  # +1, -1, or 0 when undetermined
    magnitude: TowerInterval | None

    def upper_float(self) -> float:
        if self.sign > 0:
            return self.magnitude.hi.to_float()
        if self.sign < 0:
            return -self.magnitude.lo.to_float()
        return math.inf

    def lower_float(self) -> float:
        if self.sign > 0:
            return self.magnitude.lo.to_float()
        if self.sign < 0:
            return -self.magnitude.hi.to_float()
        return -math.inf


class AlphaAffine:
    """Symbolic combination  sum_s c_s * alpha_s + [const_lo, const_hi].

    Used for logarithms of strip heights, where huge alpha terms cancel
    exactly (e.g. N*(alpha_k + 2 alpha_{k-1}) - N*alpha_k).  Cancellation
    happens on the coefficients; only the surviving combination is
    evaluated, by dominance of its highest-index term.
    """

    def __init__(self, table: AlphaTable, coeffs: dict[int, float] | None = None,
                 const: tuple[float, float] | float = 0.0):
        self.table = table
        self.coeffs = {k: float(v) for k, v in (coeffs or {}).items() if v != 0}
        if isinstance(const, tuple):
            self.const = (float(const[0]), float(const[1]))
        else:
            self.const = (float(const), float(const))

    def __add__(self, other) -> "AlphaAffine":
        if isinstance(other, AlphaAffine):
            c = dict(self.coeffs)
            for k, v in other.coeffs.items():
                c[k] = c.get(k, 0.0) + v
            lo = _step(self.const[0] + other.const[0], False)
            hi = _step(self.const[1] + other.const[1], True)
            return AlphaAffine(self.table, c, (lo, hi))
        lo, hi = (other, other) if not isinstance(other, tuple) else other
        return AlphaAffine(self.table, self.coeffs,
                           (_step(self.const[0] + lo, False), _step(self.const[1] + hi, True)))

    __radd__ = __add__

    def __neg__(self) -> "AlphaAffine":
        return AlphaAffine(self.table, {k: -v for k, v in self.coeffs.items()},
                           (-self.const[1], -self.const[0]))

    def __sub__(self, other) -> "AlphaAffine":
        if isinstance(other, AlphaAffine):
            return self + (-other)
        if isinstance(other, tuple):
            return self + (-other[1], -other[0])
        return self + (-other)

    def scale(self, s: float) -> "AlphaAffine":
        if s == 0:
            return AlphaAffine(self.table)
        lo, hi = sorted((self.const[0] * s, self.const[1] * s))
        return AlphaAffine(self.table, {k: v * s for k, v in self.coeffs.items()},
                           (_step(lo, False), _step(hi, True)))

    def _float_part(self, ks) -> tuple[float, float]:
        lo, hi = self.const
        for k in ks:
            c = self.coeffs[k]
            a = self.table[k]
            alo, ahi = a.lo.mantissa, a.hi.mantissa
            t1, t2 = sorted((c * alo, c * ahi))
            lo = _step(lo + _step(t1, False), False)
            hi = _step(hi + _step(t2, True), True)
        return lo, hi

    def evaluate(self) -> Signed:
        ks = sorted(self.coeffs, reverse=True)
        float_ks = [k for k in ks if self.table.is_float(k)]
        tower_ks = [k for k in ks if not self.table.is_float(k)]
        flo, fhi = self._float_part(float_ks)
        if not tower_ks:
            if flo > 0:
                return Signed(1, TowerInterval.between(flo, fhi))
            if fhi < 0:
                return Signed(-1, TowerInterval.between(-fhi, -flo))
            return Signed(0, None)
        s = tower_ks[0]
        c = self.coeffs[s]
        main = self.table[s] * abs(c)
        bound = TowerReal.of(max(abs(flo), abs(fhi)), True)
        for k in tower_ks[1:]:
            bound = tower_add(bound, tower_mul(self.table[k].hi, abs(self.coeffs[k]), True), True)
        lo = tower_sub(main.lo, bound, False)
        hi = tower_add(main.hi, bound, True)
        if lo.depth == 0 and lo.mantissa <= 0:
            return Signed(0, None)
        return Signed(1 if c > 0 else -1, TowerInterval(lo, hi))

    def is_positive(self) -> bool:
        return self.evaluate().sign > 0

    def is_negative(self) -> bool:
        return self.evaluate().sign < 0

    def exp_bounds(self) -> tuple[float, float]:
        """Float enclosure of exp(value); +inf upper bound when the value is
        certified positive and beyond float range."""
        v = self.evaluate()
        if v.sign == 0:
            raise ArithmeticError("sign of combination undetermined")
        lo, hi = v.lower_float(), v.upper_float()
        return _exp(lo, False) if lo > -math.inf else 0.0, _exp(hi, True) if hi < 710 else math.inf

    def __repr__(self) -> str:
        terms = " + ".join(f"{v:g}*a[{k}]" for k, v in sorted(self.coeffs.items()))
        return f"AlphaAffine({terms or '0'} + [{self.const[0]:g}, {self.const[1]:g}])"
