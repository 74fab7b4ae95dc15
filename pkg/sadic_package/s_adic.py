"""
Points of K_S, S-integers, enumeration of O_S points in adelic boxes and
nearest-S-integer rounding.

Bounds are always given in the normalized absolute value |.|_v, so a bound at
a complex place limits the squared modulus and a finite-place bound is a power
of p^f.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from sympy import multiplicity, primefactors
from sympy.ntheory.modular import crt

from .conf import get_settings
from .exceptions import EnumerationCapExceeded, InvalidInputError, PrecisionError
from .number_field import (
    KElem,
    NumberField,
    Place,
    PlaceKind,
    abs_value,
    embed,
    place_from_json,
    places_over,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SConfig:
    """A number field together with an ordered, duplicate-free set S of places."""

    K: NumberField
    S: tuple[Place, ...]

    def __post_init__(self):
        object.__setattr__(self, "S", tuple(self.S))
        if len(set(self.S)) != len(self.S):
            raise InvalidInputError("S contains a place twice")
        for v in self.S:
            if v.K != self.K:
                raise InvalidInputError(f"Place {v} does not belong to {self.K}")
        for v in self.K.archimedean_places():
            if v not in self.S:
                raise InvalidInputError("S must contain every archimedean place")

    @classmethod
    def from_primes(cls, K: NumberField, primes: Iterable[int] = ()) -> "SConfig":
        """S = archimedean places plus every place over each listed prime."""
        S = list(K.archimedean_places())
        for p in primes:
            S.extend(places_over(K, p))
        return cls(K, tuple(S))

    @property
    def archimedean(self) -> list[Place]:
        return [v for v in self.S if v.is_archimedean]

    @property
    def finite(self) -> list[Place]:
        return [v for v in self.S if not v.is_archimedean]

    @property
    def n_real(self) -> int:
        return sum(1 for v in self.S if v.kind == PlaceKind.REAL)

    @property
    def n_complex(self) -> int:
        return sum(1 for v in self.S if v.kind == PlaceKind.COMPLEX)

    @property
    def n_finite(self) -> int:
        return len(self.finite)

    @property
    def ell(self) -> int:
        return len(self.S)

    @property
    def primes(self) -> list[int]:
        return sorted({v.p for v in self.finite})

    @property
    def arch_place(self) -> Place:
        return self.archimedean[0]

    def to_json(self) -> dict:
        return {"field": self.K.label, "S": [v.to_json() for v in self.S]}

    @classmethod
    def from_json(cls, data: Mapping) -> "SConfig":
        K = NumberField.from_label(data["field"])
        S = []
        for entry in data["S"]:
            if entry in ("inf", "infinity"):
                entry = {"type": "inf"}
            elif isinstance(entry, int):
                entry = {"type": "finite", "p": entry}
            S.append(place_from_json(K, entry))
        return cls(K, tuple(S))


class PadicApprox:
    """
    An element of a completion Q_p (or K_v with e = f = 1) known up to
    finite precision.

    A nonzero value is p^valuation * unit with the unit known modulo p^prec.
    A zero value only says x = 0 mod p^valuation.
    """

    __slots__ = ("p", "valuation", "unit", "prec", "zero", "place")

    def __init__(self, p, valuation, unit=0, prec=0, zero=False, place=None):
        self.p = p
        self.valuation = valuation
        self.zero = zero
        self.place = place
        if zero:
            self.unit = 0
            self.prec = 0
        else:
            if prec <= 0:
                raise PrecisionError("nonzero p-adic value without significant digits")
            self.prec = prec
            self.unit = unit % p**prec
            if self.unit % p == 0:
                raise InvalidInputError("p-adic unit part must be coprime to p")

    @classmethod
    def zero_to(cls, p: int, absolute_precision: int, place=None) -> "PadicApprox":
        return cls(p, absolute_precision, zero=True, place=place)

    @classmethod
    def from_rational(cls, q, p: int, prec: int | None = None, place=None) -> "PadicApprox":
        prec = prec or get_settings().padic_precision
        q = Fraction(q)
        if q == 0:
            return cls.zero_to(p, prec, place)
        a = multiplicity(p, q.numerator)
        b = multiplicity(p, q.denominator)
        modulus = p**prec
        unit = (q.numerator // p**a) * pow(q.denominator // p**b, -1, modulus)
        return cls(p, a - b, unit, prec, place=place)

    @classmethod
    def from_kelem(cls, x: KElem, v: Place, prec: int | None = None) -> "PadicApprox":
        """Image of x under the embedding K -> K_v (requires e = f = 1)."""
        prec = prec or get_settings().padic_precision
        if v.e != 1 or v.f != 1:
            raise InvalidInputError(f"p-adic approximations need e = f = 1, got place {v}")
        if x.K.d == 0:
            return cls.from_rational(x.a, v.p, prec, place=v)
        if x.is_zero:
            return cls.zero_to(v.p, prec, v)
        p = v.p
        D = x.denominator
        y = x * D
        vy = v.valuation(y)
        r = omega_root(v, prec + vy)
        modulus = p ** (prec + vy)
        Y = (int(y.a) + int(y.b) * r) % modulus
        vd = multiplicity(p, D)
        unit = (Y // p**vy) * pow(D // p**vd, -1, p**prec)
        return cls(p, vy - vd, unit, prec, place=v)

    @property
    def absolute_precision(self) -> int:
        return self.valuation if self.zero else self.valuation + self.prec

    def absolute(self) -> Fraction:
        """|x|_v; 0 for a zero approximation."""
        if self.zero:
            return Fraction(0)
        return Fraction(self.p) ** (-self.valuation)

    def absolute_upper(self) -> Fraction:
        """An upper bound of |x|_v that is valid for every value the approximation allows."""
        return Fraction(self.p) ** (-self.valuation)

    def _coerce(self, other) -> "PadicApprox | None":
        if isinstance(other, PadicApprox):
            if other.p != self.p:
                raise InvalidInputError(f"Mixed primes {self.p} and {other.p}")
            return other
        prec = max(self.prec, get_settings().padic_precision)
        if isinstance(other, KElem):
            if other.K.d == 0:
                return PadicApprox.from_rational(other.a, self.p, prec, self.place)
            if self.place is None:
                raise InvalidInputError("cannot embed a quadratic element without a place")
            return PadicApprox.from_kelem(other, self.place, prec)
        if isinstance(other, (int, Fraction)):
            return PadicApprox.from_rational(other, self.p, prec, self.place)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        p = self.p
        N = min(self.absolute_precision, o.absolute_precision)
        terms = [x for x in (self, o) if not x.zero]
        if not terms:
            return PadicApprox.zero_to(p, N, self.place)
        v_min = min(x.valuation for x in terms)
        if v_min >= N:
            return PadicApprox.zero_to(p, N, self.place)
        modulus = p ** (N - v_min)
        total = sum(p ** (x.valuation - v_min) * x.unit for x in terms) % modulus
        if total == 0:
            return PadicApprox.zero_to(p, N, self.place)
        k = multiplicity(p, total)
        prec = N - v_min - k
        if prec < get_settings().min_significant_digits:
            logger.error(f"p-adic cancellation left {prec} significant digits at p={p}")
            raise PrecisionError(
                f"p-adic sum keeps only {prec} significant digits; raise SADIC_PADIC_PRECISION"
            )
        return PadicApprox(p, v_min + k, total // p**k, prec, place=self.place)

    __radd__ = __add__

    def __neg__(self):
        if self.zero:
            return self
        return PadicApprox(self.p, self.valuation, -self.unit, self.prec, place=self.place)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self + (-o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o + (-self)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        if self.zero or o.zero:
            # a zero's valuation is its absolute precision
            return PadicApprox.zero_to(self.p, self.valuation + o.valuation, self.place)
        prec = min(self.prec, o.prec)
        return PadicApprox(
            self.p, self.valuation + o.valuation, self.unit * o.unit, prec, place=self.place
        )

    __rmul__ = __mul__

    def inverse(self) -> "PadicApprox":
        if self.zero:
            raise ZeroDivisionError("inverse of a p-adic zero")
        modulus = self.p**self.prec
        return PadicApprox(
            self.p, -self.valuation, pow(self.unit, -1, modulus), self.prec, place=self.place
        )

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self * o.inverse()

    def residue(self, N: int) -> int:
        """The integer r in [0, p^N) with x = r mod p^N; x must lie in Z_p."""
        if N <= 0:
            return 0
        if self.absolute_precision < N:
            raise PrecisionError(
                f"residue mod {self.p}^{N} needs absolute precision {N}, "
                f"have {self.absolute_precision}"
            )
        if self.zero or self.valuation >= N:
            return 0
        if self.valuation < 0:
            raise InvalidInputError("residue of a non-integral p-adic value")
        return (self.p**self.valuation * self.unit) % self.p**N

    def __eq__(self, other):
        if not isinstance(other, PadicApprox):
            return NotImplemented
        return (self.p, self.valuation, self.unit, self.prec, self.zero) == (
            other.p, other.valuation, other.unit, other.prec, other.zero
        )

    def __hash__(self):
        return hash((self.p, self.valuation, self.unit, self.prec, self.zero))

    def __repr__(self):
        if self.zero:
            return f"PadicApprox(0 mod {self.p}^{self.valuation})"
        return f"PadicApprox({self.p}^{self.valuation} * {self.unit} + O({self.p}^{self.absolute_precision}))"

    def to_json(self) -> dict:
        data = {"p": self.p, "f": 1, "val": self.valuation, "prec": self.prec}
        if self.zero:
            data["zero"] = True
            data["unit"] = "0"
        elif self.p <= 36:
            data["unit"] = np.base_repr(self.unit, self.p)
        else:
            data["unit"] = str(self.unit)
            data["base"] = 10
        return data

    @classmethod
    def from_json(cls, data: Mapping, place=None) -> "PadicApprox":
        p = int(data["p"])
        if data.get("zero"):
            return cls.zero_to(p, int(data["val"]), place)
        base = int(data.get("base", p))
        prec = int(data.get("prec") or get_settings().padic_precision)
        return cls(p, int(data["val"]), int(str(data["unit"]), base), prec, place=place)


@lru_cache(maxsize=256)
def omega_root(v: Place, prec: int) -> int:
    """The root r of w's minimal polynomial in Z_p with pi(r) = 0 mod p, modulo p^prec."""
    K, p = v.K, v.p
    tr, nm = K.omega_trace, K.omega_norm
    a0, b0 = int(v.pi.a), int(v.pi.b)
    roots = [r for r in range(p) if (r * r - tr * r + nm) % p == 0 and (a0 + b0 * r) % p == 0]
    if not roots:
        raise InvalidInputError(f"place {v} has no root of w modulo {p}")
    r = roots[0]
    modulus = p**prec
    # Newton: precision doubles per step
    for _ in range(max(1, prec).bit_length() + 1):
        f = (r * r - tr * r + nm) % modulus
        df = (2 * r - tr) % modulus
        r = (r - f * pow(df, -1, modulus)) % modulus
    return r


class SAdelePoint(dict):
    """One local component per place of S."""

    def __init__(self, cfg: SConfig, components: Mapping[Place, object]):
        missing = [v for v in cfg.S if v not in components]
        if missing:
            raise InvalidInputError(f"SAdelePoint is missing components at {missing}")
        super().__init__((v, components[v]) for v in cfg.S)
        self.cfg = cfg

    @classmethod
    def diagonal(cls, cfg: SConfig, x: KElem) -> "SAdelePoint":
        return cls(cfg, {v: embed(x, v) for v in cfg.S})

    def to_json(self) -> dict:
        out = {}
        for v, value in self.items():
            key = v.label
            if isinstance(value, PadicApprox):
                out[key] = value.to_json()
            elif isinstance(value, KElem):
                out[key] = value.coordinates()
            elif isinstance(value, complex):
                out[key] = [repr(value.real), repr(value.imag)]
            else:
                out[key] = repr(float(value))
        return out


@dataclass
class SBox:
    """Per-place, per-coordinate bounds r_{v,j} in the normalized absolute value."""

    cfg: SConfig
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in self.cfg.S:
            if v not in self.bounds:
                raise InvalidInputError(f"SBox has no bound at {v}")
        for v in self.cfg.finite:
            for r in self.coordinate_bounds(v):
                value_group_exponent(r, v)

    @property
    def n(self) -> int:
        first = self.bounds[self.cfg.S[0]]
        return len(first) if isinstance(first, (list, tuple)) else 1

    def coordinate_bounds(self, v: Place) -> list:
        value = self.bounds[v]
        return list(value) if isinstance(value, (list, tuple)) else [value]

    def bound(self, v: Place, j: int):
        bounds = self.coordinate_bounds(v)
        return bounds[j] if len(bounds) > 1 else bounds[0]

    def to_json(self) -> dict:
        return {
            v.label: [str(r) if isinstance(r, Fraction) else repr(float(r)) for r in self.coordinate_bounds(v)]
            for v in self.cfg.S
        }


def value_group_exponent(r, v: Place) -> int:
    """k with r = (p^f)^k exactly."""
    q = v.residue_size
    r = Fraction(r)
    if r <= 0:
        raise InvalidInputError(f"finite-place bound must be positive, got {r}")
    k = _floor_log(r, q)
    if Fraction(q) ** k != r:
        raise InvalidInputError(f"bound {r} at place {v} is not a power of {q}")
    return k


def snap_to_value_group(r, v: Place) -> Fraction:
    """Largest element (p^f)^k of the value group with (p^f)^k <= r."""
    r = Fraction(r)
    if r <= 0:
        raise InvalidInputError(f"cannot snap non-positive bound {r}")
    return Fraction(v.residue_size) ** _floor_log(r, v.residue_size)


def _floor_log(r: Fraction, q: int) -> int:
    k = int(math.floor((math.log(r.numerator) - math.log(r.denominator)) / math.log(q)))
    while Fraction(q) ** (k + 1) <= r:
        k += 1
    while Fraction(q) ** k > r:
        k -= 1
    return k


def is_s_integer(x: KElem, cfg: SConfig) -> bool:
    """True iff v(x) >= 0 at every finite place outside S."""
    if x.is_zero:
        return True
    in_S = set(cfg.finite)
    for p in primefactors(x.denominator):
        for v in places_over(cfg.K, p):
            if v not in in_S and v.valuation(x) < 0:
                return False
    return True


def _cap(cap):
    return get_settings().enumeration_cap if cap is None else cap


def _shift_exponents(cfg: SConfig, lower: Mapping[Place, int]) -> int:
    """Smallest D = prod p^s_p with e_v * s_p >= -lower[v] for every finite v."""
    D = 1
    for p in cfg.primes:
        s = 0
        for v in cfg.finite:
            if v.p == p and v in lower:
                s = max(s, -(lower[v] // v.e) if lower[v] < 0 else 0)
        D *= p**s
    return D


def _disc_points(K: NumberField, center: complex, radius_sq: float, cap: int) -> Iterator[KElem]:
    """Integral a + b*w whose embedding lies (up to one step of slack) in the disc."""
    if radius_sq < 0:
        return
    radius = math.sqrt(radius_sq)
    w = K.omega_embedding
    estimate = 2 * math.pi * radius_sq / math.sqrt(abs(K.discriminant)) + 4 * radius / w.imag + 4
    if estimate > cap:
        raise EnumerationCapExceeded(estimate, cap, "disc enumeration")
    b_lo = math.floor((center.imag - radius) / w.imag) - 1
    b_hi = math.ceil((center.imag + radius) / w.imag) + 1
    for b in range(b_lo, b_hi + 1):
        dy = b * w.imag - center.imag
        rest = radius_sq - dy * dy
        if rest < 0:
            continue
        s = math.sqrt(rest)
        shift = b * w.real
        for a in range(math.floor(center.real - s - shift) - 1, math.ceil(center.real + s - shift) + 2):
            yield KElem(K, a, b)


def _coordinate_values(cfg: SConfig, bounds: Mapping[Place, object], cap: int) -> list[KElem]:
    """All x in O_S with |x|_v <= bounds[v] for every v in S, sorted."""
    K = cfg.K
    arch = cfg.arch_place
    r_arch = Fraction(bounds[arch])
    # |x|_v <= (p^f)^k  <=>  v_pi(x) >= -k
    lower = {v: -value_group_exponent(bounds[v], v) for v in cfg.finite}

    if K.d == 0:
        D = 1
        M = 1
        for v in cfg.finite:
            k = -lower[v]
            D *= v.p ** max(0, k)
            M *= v.p ** max(0, -k)
        m_max = math.floor(r_arch * D)
        m_max -= m_max % M
        estimate = 2 * m_max / M + 1
        if estimate > cap:
            raise EnumerationCapExceeded(estimate, cap, "box enumeration")
        return [KElem(K, Fraction(m, D)) for m in range(-m_max, m_max + 1, M)]

    D = _shift_exponents(cfg, lower)
    R = r_arch * D * D
    values = []
    for y in _disc_points(K, 0j, float(R), cap):
        if y.norm() > R:
            continue
        x = y / D
        if not is_s_integer(x, cfg):
            continue
        if all(y.is_zero or v.valuation(x) >= lower[v] for v in cfg.finite):
            values.append(x)
    values.sort(key=KElem.sort_key)
    return values


def enumerate_box(cfg: SConfig, n: int, box: SBox, cap: int | None = None) -> list[tuple[KElem, ...]]:
    """Every x in O_S^n with |x_j|_v <= r_{v,j}, sorted lexicographically."""
    cap = _cap(cap)
    if n < 1:
        raise InvalidInputError("enumerate_box needs n >= 1")
    for v in cfg.archimedean:
        for r in box.coordinate_bounds(v):
            if not math.isfinite(float(r)):
                raise InvalidInputError("box bounds must be finite")
    per_coordinate = []
    total = 1
    for j in range(n):
        values = _coordinate_values(cfg, {v: box.bound(v, j) for v in cfg.S}, cap)
        total *= len(values)
        if total > cap:
            raise EnumerationCapExceeded(total, cap, "box enumeration")
        per_coordinate.append(values)
    points = list(itertools.product(*per_coordinate))
    logger.debug(f"enumerate_box: {len(points)} points in {cfg.K.label}^{n}")
    return points


def _target_residue(value, v: Place, D: int, N: int) -> int:
    """Integer c with D * value = c mod p^N (places with e = f = 1)."""
    p = v.p
    if isinstance(value, PadicApprox):
        return (value * D).residue(N)
    q = value if isinstance(value, KElem) else KElem(v.K, value)
    if q.K.d != 0:
        return PadicApprox.from_kelem(q * D, v, max(N, 1)).residue(N)
    q = q.a * D
    if N <= 0:
        return 0
    return (q.numerator * pow(q.denominator, -1, p**N)) % p**N


def _local_valuation(value, v: Place):
    if isinstance(value, PadicApprox):
        return value.absolute_precision if value.zero else value.valuation
    if isinstance(value, KElem):
        return v.valuation(value)
    return v.valuation(KElem(v.K, value))


def s_integer_candidates(
    targets: Mapping[Place, object],
    bounds: Mapping[Place, object],
    cfg: SConfig,
    cap: int | None = None,
) -> list[KElem]:
    """All y in O_S with |y - t_v|_v <= bound_v at every v in S, nearest first."""
    cap = _cap(cap)
    K = cfg.K
    arch = cfg.arch_place
    tau = get_settings().tau_arch
    # required pi-adic depth of y - t_v
    depth = {v: -value_group_exponent(bounds[v], v) for v in cfg.finite}
    lower = {}
    for v in cfg.finite:
        t_val = _local_valuation(targets[v], v)
        lower[v] = min(depth[v], t_val) if t_val != math.inf else depth[v]

    center = embed(targets[arch], arch)
    r_arch = float(bounds[arch])

    if K.d == 0:
        D = _shift_exponents(cfg, lower)
        residues, moduli = [], []
        for v in cfg.finite:
            N = depth[v] + multiplicity(v.p, D)
            if N > 0:
                residues.append(_target_residue(targets[v], v, D, N))
                moduli.append(v.p**N)
        if moduli:
            c, M = crt(moduli, residues)
            c, M = int(c), int(M)
        else:
            c, M = 0, 1
        t = Fraction(float(center)) * D
        r = Fraction(r_arch) * D * (1 + Fraction(tau))
        lo = math.ceil(t - r)
        hi = math.floor(t + r)
        first = lo + (c - lo) % M
        if first > hi:
            return []
        estimate = (hi - first) // M + 1
        if estimate > cap:
            raise EnumerationCapExceeded(estimate, cap, "S-integer rounding")
        zs = list(range(first, hi + 1, M))
        zs.sort(key=lambda z: (abs(Fraction(z) - t), z))
        return [KElem(K, Fraction(z, D)) for z in zs]

    D = _shift_exponents(cfg, lower)
    c = complex(center) * D
    R = r_arch * D * D
    found = []
    for z in _disc_points(K, c, R * (1 + tau), cap):
        dist = abs(z.embed() - c) ** 2
        if dist > R * (1 + tau):
            continue
        y = z / D
        if not is_s_integer(y, cfg):
            continue
        if all(_finite_ok(y, targets[v], v, depth[v]) for v in cfg.finite):
            found.append((dist, y.sort_key(), y))
    found.sort(key=lambda item: (item[0], item[1]))
    return [y for _, _, y in found]


def _finite_ok(y: KElem, target, v: Place, depth: int) -> bool:
    """v(y - target) >= depth, decided exactly or to the available precision."""
    if isinstance(target, PadicApprox):
        prec = max(get_settings().padic_precision, depth + 8)
        diff = PadicApprox.from_kelem(y, v, prec) - target
    else:
        diff = y - target
    if isinstance(diff, PadicApprox):
        if diff.zero:
            if diff.absolute_precision < depth:
                raise PrecisionError(f"cannot decide congruence to depth {depth} at {v}")
            return True
        return diff.valuation >= depth
    return diff.is_zero or v.valuation(diff) >= depth


def nearest_s_integer(
    targets: Mapping[Place, object],
    bounds: Mapping[Place, object],
    cfg: SConfig,
    cap: int | None = None,
) -> KElem | None:
    """y in O_S within the bounds of the targets, closest at the archimedean place."""
    candidates = s_integer_candidates(targets, bounds, cfg, cap)
    return candidates[0] if candidates else None


def local_leq(value, bound, v: Place) -> bool:
    """|value|_v <= bound, exact at finite places and within tau_arch otherwise."""
    if v.is_archimedean:
        return abs_value(value, v) <= float(bound) * (1 + get_settings().tau_arch)
    if isinstance(value, PadicApprox) and value.zero:
        if value.absolute_upper() > Fraction(bound):
            raise PrecisionError(f"p-adic zero at {v} too imprecise to compare with {bound}")
        return True
    return abs_value(value, v) <= Fraction(bound)


def sequence_to_json(values: Sequence[KElem]) -> list:
    return [x.coordinates() for x in values]
