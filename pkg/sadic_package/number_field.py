"""
Exact arithmetic in K = Q or Q(sqrt(-d)), d in {1, 2, 3, 7, 11}.

Elements are stored exactly in the integral basis {1, w} of O_K. Places carry
their local degree, and absolute values follow the normalization
|x|_v = ||x||_v^{d_v}, so the complex absolute value is the squared modulus.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from sympy import Poly, isprime, multiplicity, primefactors
from sympy.abc import x as _x

from .exceptions import InvalidInputError

logger = logging.getLogger(__name__)

SUPPORTED_D = (1, 2, 3, 7, 11)


class FieldKind(str, Enum):
    RATIONALS = "rationals"
    IMAGINARY_QUADRATIC = "imaginary_quadratic"


class PlaceKind(str, Enum):
    REAL = "real"
    COMPLEX = "complex"
    FINITE = "finite"


@dataclass(frozen=True)
class NumberField:
    """Q (d == 0) or the imaginary quadratic field Q(sqrt(-d))."""

    d: int = 0

    def __post_init__(self):
        if self.d != 0 and self.d not in SUPPORTED_D:
            raise InvalidInputError(
                f"Unsupported field Q(sqrt(-{self.d})); supported d: {SUPPORTED_D}"
            )

    @classmethod
    def rationals(cls) -> "NumberField":
        return cls(0)

    @classmethod
    def imaginary_quadratic(cls, d: int) -> "NumberField":
        if d == 0:
            raise InvalidInputError("d must be positive for an imaginary quadratic field")
        return cls(d)

    @classmethod
    def from_label(cls, label: str) -> "NumberField":
        """Parse "Q", "Q(i)", "Q(sqrt-d)" or "Q(sqrt(-d))"."""
        text = label.replace(" ", "")
        if text == "Q":
            return cls(0)
        if text == "Q(i)":
            return cls(1)
        for prefix, suffix in (("Q(sqrt(-", "))"), ("Q(sqrt-", ")")):
            if text.startswith(prefix) and text.endswith(suffix):
                body = text[len(prefix): len(text) - len(suffix)]
                if body.isdigit():
                    return cls.imaginary_quadratic(int(body))
        raise InvalidInputError(f"Unsupported field label '{label}'")

    @property
    def label(self) -> str:
        if self.d == 0:
            return "Q"
        if self.d == 1:
            return "Q(i)"
        return f"Q(sqrt-{self.d})"

    @property
    def kind(self) -> FieldKind:
        return FieldKind.RATIONALS if self.d == 0 else FieldKind.IMAGINARY_QUADRATIC

    @property
    def degree(self) -> int:
        return 1 if self.d == 0 else 2

    @property
    def discriminant(self) -> int:
        if self.d == 0:
            return 1
        # -d = 1 mod 4 gives w = (1 + sqrt(-d))/2, otherwise w = sqrt(-d).
        return -self.d if (-self.d) % 4 == 1 else -4 * self.d

    @property
    def complex_place_count(self) -> int:
        return 0 if self.d == 0 else 1

    @property
    def real_place_count(self) -> int:
        return 1 if self.d == 0 else 0

    @property
    def omega_trace(self) -> int:
        """tr(w); w satisfies w^2 = tr*w - nm."""
        return 1 if self.d != 0 and (-self.d) % 4 == 1 else 0

    @property
    def omega_norm(self) -> int:
        if self.d == 0:
            return 0
        return (1 + self.d) // 4 if self.omega_trace else self.d

    @property
    def omega_embedding(self) -> complex:
        """sigma(w) with the fixed choice sigma(sqrt(-d)) = +i*sqrt(d)."""
        if self.d == 0:
            return complex(0.0)
        root = math.sqrt(self.d)
        if self.omega_trace:
            return complex(0.5, root / 2)
        return complex(0.0, root)

    def __call__(self, a=0, b=0) -> "KElem":
        return KElem(self, a, b)

    def one(self) -> "KElem":
        return KElem(self, 1)

    def zero(self) -> "KElem":
        return KElem(self, 0)

    def archimedean_places(self) -> list["Place"]:
        if self.d == 0:
            return [Place(self, PlaceKind.REAL)]
        return [Place(self, PlaceKind.COMPLEX)]

    def __str__(self):
        return self.label


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, str)):
        return Fraction(value)
    if isinstance(value, float):
        raise InvalidInputError(f"Field coordinates must be exact, got float {value!r}")
    return Fraction(value)


@dataclass(frozen=True)
class KElem:
    """An exact element a + b*w of K."""

    K: NumberField
    a: Fraction = Fraction(0)
    b: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "a", _as_fraction(self.a))
        object.__setattr__(self, "b", _as_fraction(self.b))
        if self.K.d == 0 and self.b != 0:
            raise InvalidInputError("Elements of Q have no w-coordinate")

    def _coerce(self, other) -> "KElem | None":
        if isinstance(other, KElem):
            if other.K != self.K:
                raise InvalidInputError(f"Mixed fields {self.K} and {other.K}")
            return other
        if isinstance(other, (int, Fraction)):
            return KElem(self.K, other)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return KElem(self.K, self.a + o.a, self.b + o.b)

    __radd__ = __add__

    def __neg__(self):
        return KElem(self.K, -self.a, -self.b)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return KElem(self.K, self.a - o.a, self.b - o.b)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o - self

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        tr, nm = self.K.omega_trace, self.K.omega_norm
        bd = self.b * o.b
        return KElem(
            self.K,
            self.a * o.a - bd * nm,
            self.a * o.b + self.b * o.a + bd * tr,
        )

    __rmul__ = __mul__

    def conjugate(self) -> "KElem":
        return KElem(self.K, self.a + self.b * self.K.omega_trace, -self.b)

    def norm(self) -> Fraction:
        """N_{K/Q}(x); for Q this is x itself."""
        if self.K.d == 0:
            return self.a
        return self.a * self.a + self.a * self.b * self.K.omega_trace + self.b * self.b * self.K.omega_norm

    def inverse(self) -> "KElem":
        if self.is_zero:
            raise ZeroDivisionError("inverse of zero in K")
        if self.K.d == 0:
            return KElem(self.K, 1 / self.a)
        n = self.norm()
        c = self.conjugate()
        return KElem(self.K, c.a / n, c.b / n)

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self * o.inverse()

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o * self.inverse()

    def __pow__(self, k: int):
        if not isinstance(k, int):
            return NotImplemented
        base = self if k >= 0 else self.inverse()
        result = self.K.one()
        for _ in range(abs(k)):
            result = result * base
        return result

    @property
    def is_zero(self) -> bool:
        return self.a == 0 and self.b == 0

    @property
    def is_integral(self) -> bool:
        return self.a.denominator == 1 and self.b.denominator == 1

    @property
    def denominator(self) -> int:
        """Smallest positive integer D with D*x integral."""
        return math.lcm(self.a.denominator, self.b.denominator)

    def embed(self) -> complex:
        """sigma(x) for the fixed archimedean embedding."""
        return complex(float(self.a)) + float(self.b) * self.K.omega_embedding

    def sort_key(self):
        return (self.a, self.b)

    def coordinates(self) -> list:
        if self.K.d == 0:
            return [str(self.a)]
        return [str(self.a), str(self.b)]

    def __repr__(self):
        if self.K.d == 0:
            return f"KElem({self.a})"
        return f"KElem({self.a}, {self.b}; {self.K.label})"

    def __str__(self):
        if self.K.d == 0 or self.b == 0:
            return str(self.a)
        return f"{self.a}{'+' if self.b >= 0 else '-'}{abs(self.b)}w"


@dataclass(frozen=True)
class Place:
    """A place of K. Finite places carry a prime p, uniformizer pi and (e, f)."""

    K: NumberField
    kind: PlaceKind
    p: int | None = None
    pi: KElem | None = None
    e: int = 1
    f: int = 1

    @property
    def is_archimedean(self) -> bool:
        return self.kind != PlaceKind.FINITE

    @property
    def local_degree(self) -> int:
        if self.kind == PlaceKind.REAL:
            return 1
        if self.kind == PlaceKind.COMPLEX:
            return 2
        return self.e * self.f

    @property
    def residue_size(self) -> int:
        """p^f; |pi|_v = 1/p^f generates the value group."""
        return self.p ** self.f

    @property
    def label(self) -> str:
        if self.is_archimedean:
            return "inf"
        if self.K.d == 0 or self.e * self.f == 2:
            return str(self.p)
        return f"{self.p}:{self.pi}"

    def valuation(self, x: KElem) -> float | int:
        """v_pi(x); +inf for x == 0."""
        if self.is_archimedean:
            raise InvalidInputError("valuation is only defined at finite places")
        if x.is_zero:
            return math.inf
        if self.K.d == 0:
            return multiplicity(self.p, x.a.numerator) - multiplicity(self.p, x.a.denominator)
        D = x.denominator
        y = x * D
        shift = self.e * multiplicity(self.p, D)
        if self.e == 1 and self.f == 2:
            # inert: pi = p and {1, w} is a Z_p-basis of O_v
            ya, yb = int(y.a), int(y.b)
            vals = [multiplicity(self.p, c) for c in (ya, yb) if c != 0]
            return min(vals) - shift
        count = 0
        pi_bar = self.pi.conjugate()
        n_pi = self.pi.norm()
        while True:
            q = y * pi_bar / n_pi
            if not q.is_integral:
                break
            y = q
            count += 1
        return count - shift

    def to_json(self) -> dict:
        if self.is_archimedean:
            return {"type": "inf"}
        pi = [int(self.pi.a), int(self.pi.b)] if self.K.d else [int(self.pi.a)]
        return {"type": "finite", "p": self.p, "pi": pi}

    def __str__(self):
        return self.label


def places_over(K: NumberField, p: int) -> list[Place]:
    """All finite places of K over the rational prime p."""
    if not isinstance(p, int) or not isprime(p):
        raise InvalidInputError(f"{p!r} is not a rational prime")
    return list(_places_over(K, p))


@lru_cache(maxsize=None)
def _places_over(K: NumberField, p: int) -> tuple[Place, ...]:
    if K.d == 0:
        return (Place(K, PlaceKind.FINITE, p, KElem(K, p), 1, 1),)

    poly = Poly(_x**2 - K.omega_trace * _x + K.omega_norm, _x, modulus=p)
    _, factors = poly.factor_list()
    if len(factors) == 1 and factors[0][1] == 2:
        pi = _element_of_norm(K, p)
        places = (Place(K, PlaceKind.FINITE, p, pi, 2, 1),)
    elif len(factors) == 2:
        pi = _element_of_norm(K, p)
        places = (
            Place(K, PlaceKind.FINITE, p, pi, 1, 1),
            Place(K, PlaceKind.FINITE, p, pi.conjugate(), 1, 1),
        )
    else:
        places = (Place(K, PlaceKind.FINITE, p, KElem(K, p), 1, 2),)

    assert sum(v.e * v.f for v in places) == K.degree
    logger.debug(f"{K.label}: {p} -> {[(v.label, v.e, v.f) for v in places]}")
    return places


def _element_of_norm(K: NumberField, p: int) -> KElem:
    """First a + b*w of norm p, scanning b = 1, 2, ... and a from high to low."""
    bound = p + 1
    for b in range(1, bound + 1):
        for a in range(bound, -bound - 1, -1):
            candidate = KElem(K, a, b)
            if candidate.norm() == p:
                return candidate
    raise InvalidInputError(f"No element of norm {p} in {K.label}")


def resolve_place(K: NumberField, p: int, pi=None) -> Place:
    """The canonical place over p, optionally selected by a given generator."""
    places = places_over(K, p)
    if pi is None:
        if len(places) > 1:
            raise InvalidInputError(f"{p} splits in {K.label}; a generator pi is required")
        return places[0]
    if not isinstance(pi, KElem):
        pi = KElem(K, *pi)
    for v in places:
        if v.valuation(pi) >= 1:
            return v
    raise InvalidInputError(f"{pi} does not lie over {p} in {K.label}")


def place_from_json(K: NumberField, data: Mapping) -> Place:
    if data.get("type") == "inf":
        return K.archimedean_places()[0]
    if data.get("type") == "finite":
        return resolve_place(K, int(data["p"]), data.get("pi"))
    raise InvalidInputError(f"Unknown place descriptor {data!r}")


def embed(value, v: Place):
    """Move a field element into the completion K_v; other values pass through."""
    if isinstance(value, KElem) and v.is_archimedean:
        z = value.embed()
        return z.real if v.kind == PlaceKind.REAL else z
    return value


def abs_value(x, v: Place):
    """Normalized |x|_v: exact Fraction at finite places, float at archimedean ones."""
    if v.is_archimedean:
        x = embed(x, v)
        if v.kind == PlaceKind.COMPLEX:
            return abs(complex(x)) ** 2
        return abs(float(x))

    if isinstance(x, KElem):
        if x.is_zero:
            return Fraction(0)
        return Fraction(v.residue_size) ** (-v.valuation(x))
    if isinstance(x, (int, Fraction)):
        return abs_value(KElem(v.K, x), v)
    # completion values (p-adic approximations) know their own size
    return x.absolute()


def check_product_formula(x: KElem) -> float:
    """|log prod_v |x|_v| over all places of K, archimedean factors in floating point."""
    if x.is_zero:
        raise InvalidInputError("product formula needs x != 0")
    K = x.K
    n = x.norm()
    product = math.prod(abs_value(x, v) for v in K.archimedean_places())
    for p in sorted(set(primefactors(n.numerator)) | set(primefactors(n.denominator))):
        for v in places_over(K, p):
            product *= abs_value(x, v)
    return abs(math.log(product))


def field_constant(K: NumberField) -> float:
    """const_K = (2/pi)^s |D_K|^{1/2}."""
    return (2 / math.pi) ** K.complex_place_count * math.sqrt(abs(K.discriminant))


def local_norm(values: Sequence, v: Place):
    """||x||_{v,2}: Euclidean (real), squared Hermitian (complex), max |.|_v (finite)."""
    if v.kind == PlaceKind.REAL:
        return float(np.linalg.norm([float(embed(c, v)) for c in values])) if values else 0.0
    if v.kind == PlaceKind.COMPLEX:
        return float(sum(abs(complex(embed(c, v))) ** 2 for c in values))
    return max((abs_value(c, v) for c in values), default=Fraction(0))


def content_vector(x, S: Sequence[Place]):
    """c(x) = prod_{v in S} ||x^{(v)}||_{v,2}.

    ``x`` is either a mapping place -> local vector, or a sequence of field
    elements embedded diagonally.
    """
    K = S[0].K
    missing = [v for v in K.archimedean_places() if v not in S]
    if missing:
        raise InvalidInputError("S must contain every archimedean place")
    result = 1.0
    for v in S:
        local = x[v] if isinstance(x, Mapping) else x
        result *= float(local_norm(local, v))
    return result
