"""
Product measures on balls of X = prod_v K_v^{l_v}, Federer and Besicovitch
constants, Monte Carlo (C, alpha)-good certification, nonplanarity checks and
the rho_v estimator of the sup lower bound for linear combinations.

Archimedean balls are sup-norm cubes (real) or products of discs (complex).
A finite-place ball is c + p^k Z_p^l with radius p^-k; only places with
e = f = 1 are supported, so K_v = Q_p.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from sympy import Matrix, Poly, Rational, sympify
from sympy import symbols as sym_symbols

from .conf import get_settings
from .exceptions import InvalidInputError, NonplanarityError
from .number_field import Place, PlaceKind
from .s_adic import snap_to_value_group, value_group_exponent

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalBall:
    place: Place
    dim: int
    center: tuple
    radius: object

    def __post_init__(self):
        if len(self.center) != self.dim:
            raise InvalidInputError("ball center has the wrong dimension")
        if self.place.is_archimedean:
            object.__setattr__(self, "radius", float(self.radius))
            if self.radius <= 0:
                raise InvalidInputError("ball radius must be positive")
        else:
            if self.place.e != 1 or self.place.f != 1:
                raise InvalidInputError("finite-place balls need a place with e = f = 1")
            object.__setattr__(self, "radius", Fraction(self.radius))
            object.__setattr__(self, "center", tuple(Fraction(c) for c in self.center))
            value_group_exponent(self.radius, self.place)

    @property
    def depth(self) -> int:
        """k with radius p^-k (finite places)."""
        return -value_group_exponent(self.radius, self.place)

    def scaled(self, factor: float) -> "LocalBall":
        """The ball with the same center and radius factor * r (snapped to the value group at finite places)."""
        if self.place.is_archimedean:
            return LocalBall(self.place, self.dim, self.center, self.radius * factor)
        radius = snap_to_value_group(self.radius * Fraction(factor), self.place)
        return LocalBall(self.place, self.dim, self.center, radius)


@dataclass(frozen=True)
class MeasureSpec:
    """mu = prod_v mu_v restricted to a product ball."""

    balls: tuple

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))
        places = [b.place for b in self.balls]
        if len(set(places)) != len(places):
            raise InvalidInputError("a measure spec lists each place once")

    @property
    def places(self) -> list[Place]:
        return [b.place for b in self.balls]

    def ball(self, v: Place) -> LocalBall:
        for b in self.balls:
            if b.place == v:
                return b
        raise InvalidInputError(f"no ball at place {v}")

    def scaled(self, factor: float) -> "MeasureSpec":
        return MeasureSpec(tuple(b.scaled(factor) for b in self.balls))


@dataclass
class SampleSet:
    spec: MeasureSpec
    size: int
    seed: int
    values: dict = field(default_factory=dict)

    def at(self, v: Place):
        return self.values[v]


def _streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def _sample_local(ball: LocalBall, N: int, rng: np.random.Generator):
    v = ball.place
    if v.kind == PlaceKind.REAL:
        center = np.array([float(c) for c in ball.center])
        return center + ball.radius * rng.uniform(-1.0, 1.0, size=(N, ball.dim))
    if v.kind == PlaceKind.COMPLEX:
        center = np.array([complex(c) for c in ball.center])
        r = ball.radius * np.sqrt(rng.uniform(0.0, 1.0, size=(N, ball.dim)))
        phase = rng.uniform(0.0, 2 * math.pi, size=(N, ball.dim))
        return center + r * np.exp(1j * phase)
    p = v.p
    digits = get_settings().sample_digits
    draws = rng.integers(0, p, size=(N, ball.dim, digits)).tolist()
    weights = [p**i for i in range(digits)]
    shift = Fraction(p) ** ball.depth
    return [
        tuple(c + shift * sum(d * w for d, w in zip(coord, weights)) for c, coord in zip(ball.center, row))
        for row in draws
    ]


def sample_ball(spec: MeasureSpec, N: int, seed: int) -> SampleSet:
    """N samples per place, one PCG64 stream per place spawned from ``seed``."""
    if N < 1:
        raise InvalidInputError("sample count must be positive")
    streams = _streams(seed, len(spec.balls))
    values = {b.place: _sample_local(b, N, rng) for b, rng in zip(spec.balls, streams)}
    return SampleSet(spec, N, seed, values)


def measure_of_ball(ball: LocalBall) -> float:
    """Lebesgue volume of the cube or polydisc; Haar measure with mu(Z_p) = 1."""
    if ball.place.kind == PlaceKind.REAL:
        return (2 * ball.radius) ** ball.dim
    if ball.place.kind == PlaceKind.COMPLEX:
        return (math.pi * ball.radius**2) ** ball.dim
    return float(ball.radius) ** ball.dim


def federer_constant(spec: MeasureSpec) -> float:
    """sup mu(3B)/mu(B), multiplied over the places."""
    total = 1
    for b in spec.balls:
        v = b.place
        if v.kind == PlaceKind.REAL:
            total *= 3**b.dim
        elif v.kind == PlaceKind.COMPLEX:
            total *= 3 ** (2 * b.dim)
        else:
            k = 1
            while v.p**k < 3:
                k += 1
            total *= v.p ** (k * b.dim)
    return total


def empirical_federer_ratio(ball: LocalBall, N: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mu(3B)/mu(B): sample 3B and count hits in B. Returns (ratio, stderr of the hit fraction)."""
    big = ball.scaled(3)
    samples = sample_ball(MeasureSpec((big,)), N, seed).at(ball.place)
    if ball.place.is_archimedean:
        center = np.array([complex(c) for c in ball.center])
        inside = np.all(np.abs(samples - center) <= ball.radius, axis=1)
        hits = float(np.mean(inside))
    else:
        k = ball.depth
        p = ball.place.p
        hits = float(np.mean([
            all((x - c) == 0 or _vp(x - c, p) >= k for x, c in zip(row, ball.center))
            for row in samples
        ]))
    stderr = math.sqrt(max(hits * (1 - hits), 0.0) / N)
    return (1 / hits if hits else math.inf), stderr


def besicovitch_constant(spec: MeasureSpec) -> float:
    """N_X: 1 for ultrametric X, otherwise the configured table value for the archimedean real dimension."""
    real_dim = 0
    for b in spec.balls:
        if b.place.kind == PlaceKind.REAL:
            real_dim += b.dim
        elif b.place.kind == PlaceKind.COMPLEX:
            real_dim += 2 * b.dim
    if real_dim == 0:
        return 1.0
    table = {1: 2.0, 2: 19.0}
    table.update(get_settings().besicovitch)
    if real_dim not in table:
        raise InvalidInputError(
            f"no Besicovitch constant configured for real dimension {real_dim}; set SADIC_BESICOVITCH"
        )
    return float(table[real_dim])


def _vp(x: Fraction, p: int) -> int:
    num, den = x.numerator, x.denominator
    v = 0
    while num % p == 0:
        num //= p
        v += 1
    while den % p == 0:
        den //= p
        v -= 1
    return v


def padic_abs(x: Fraction, p: int) -> float:
    if x == 0:
        return 0.0
    return float(Fraction(p) ** (-_vp(x, p)))


class Polynomial:
    """A polynomial with rational coefficients stored as (exponents, coefficient) terms."""

    def __init__(self, terms: Sequence[tuple], nvars: int):
        self.terms = [(tuple(e), Fraction(c)) for e, c in terms if c != 0]
        self.nvars = nvars

    @classmethod
    def parse(cls, text: str, variables: Sequence[str]) -> "Polynomial":
        syms = sym_symbols(list(variables))
        if not isinstance(syms, (list, tuple)):
            syms = [syms]
        poly = Poly(sympify(text), *syms)
        terms = []
        for monom, coeff in poly.terms():
            if not coeff.is_Rational:
                raise InvalidInputError(f"coefficient {coeff} of '{text}' is not rational")
            terms.append((monom, Fraction(int(coeff.p), int(coeff.q))))
        return cls(terms, len(syms))

    @property
    def degree(self) -> int:
        return max((sum(e) for e, _ in self.terms), default=0)

    def evaluate(self, X, v: Place):
        """Values at every sample row: a NumPy vector at archimedean places, a list of Fractions otherwise."""
        if v.is_archimedean:
            X = np.asarray(X)
            out = np.zeros(X.shape[0], dtype=X.dtype)
            for exps, c in self.terms:
                term = np.full(X.shape[0], float(c), dtype=X.dtype)
                for i, e in enumerate(exps):
                    if e:
                        term = term * X[:, i] ** e
                out = out + term
            return out
        out = []
        for row in X:
            total = Fraction(0)
            for exps, c in self.terms:
                term = c
                for i, e in enumerate(exps):
                    if e:
                        term *= row[i] ** e
                total += term
            out.append(total)
        return out

    def lipschitz(self, ball: LocalBall) -> float:
        """A sup-norm Lipschitz bound on the (archimedean) ball."""
        R = max(abs(complex(c)) for c in ball.center) + ball.radius
        total = 0.0
        for exps, c in self.terms:
            d = sum(exps)
            if d:
                total += abs(float(c)) * d * R ** (d - 1)
        return total

    def sup_bound(self, ball: LocalBall) -> float:
        """An upper bound for the plain absolute value |g(x)| on the ball."""
        if ball.place.is_archimedean:
            R = max(abs(complex(c)) for c in ball.center) + ball.radius
            return sum(abs(float(c)) * R ** sum(e) for e, c in self.terms)
        p = ball.place.p
        R = max([float(ball.radius)] + [padic_abs(c, p) for c in ball.center])
        return max((padic_abs(c, p) * R ** sum(e) for e, c in self.terms), default=0.0)


@dataclass
class MapSpec:
    """f^{(v)} = (f_1, ..., f_n) per place, as polynomials in l_v variables."""

    components: Mapping[Place, list]

    def __post_init__(self):
        sizes = {len(polys) for polys in self.components.values()}
        if len(sizes) != 1:
            raise InvalidInputError("every place must carry the same number of component functions")

    @property
    def n(self) -> int:
        return len(next(iter(self.components.values())))

    @classmethod
    def parse(cls, exprs: Mapping[Place, Sequence[str]], variables: Mapping[Place, Sequence[str]]) -> "MapSpec":
        return cls({v: [Polynomial.parse(e, variables[v]) for e in items] for v, items in exprs.items()})

    @classmethod
    def veronese(cls, places: Sequence[Place], n: int) -> "MapSpec":
        return cls({v: [Polynomial([((k,), 1)], 1) for k in range(1, n + 1)] for v in places})

    def evaluate(self, samples: SampleSet, v: Place):
        """Rows (f_1(x), ..., f_n(x)): an (N, n) array at archimedean places, lists of Fractions otherwise."""
        X = samples.at(v)
        cols = [f.evaluate(X, v) for f in self.components[v]]
        if v.is_archimedean:
            return np.column_stack(cols) if cols else np.zeros((samples.size, 0))
        return [tuple(row) for row in zip(*cols)] if cols else [() for _ in range(samples.size)]

    def design_matrix(self, samples: SampleSet, v: Place):
        """Rows (1, f_1(x), ..., f_n(x))."""
        F = self.evaluate(samples, v)
        if v.is_archimedean:
            dtype = complex if v.kind == PlaceKind.COMPLEX else float
            return np.column_stack([np.ones(samples.size, dtype=dtype), np.asarray(F, dtype=dtype)])
        return [(Fraction(1),) + tuple(row) for row in F]


def _to_number(a, v: Place):
    if v.kind == PlaceKind.COMPLEX:
        return complex(a)
    return float(a.real) if isinstance(a, complex) else float(a)


class ScalarFunction:
    """A function X -> F consumed only through |f(x)| at sample points."""

    def values(self, samples: SampleSet) -> np.ndarray:
        raise NotImplementedError

    def lipschitz(self, spec: MeasureSpec) -> float:
        return 0.0

    def sup_bound(self, spec: MeasureSpec) -> float:
        return math.inf


class LinearCombination(ScalarFunction):
    """a_0 + a_1 f_1 + ... + a_n f_n at one place, measured in |.|_v."""

    def __init__(self, fmap: MapSpec, place: Place, coeffs: Sequence):
        if len(coeffs) != fmap.n + 1:
            raise InvalidInputError("need n + 1 coefficients")
        self.fmap = fmap
        self.place = place
        self.coeffs = list(coeffs)

    def raw(self, samples: SampleSet):
        v = self.place
        Phi = self.fmap.design_matrix(samples, v)
        if v.is_archimedean:
            return Phi @ np.asarray([_to_number(a, v) for a in self.coeffs], dtype=Phi.dtype)
        return [sum(Fraction(a) * x for a, x in zip(self.coeffs, row)) for row in Phi]

    def values(self, samples: SampleSet) -> np.ndarray:
        v = self.place
        raw = self.raw(samples)
        if v.kind == PlaceKind.REAL:
            return np.abs(raw)
        if v.kind == PlaceKind.COMPLEX:
            return np.abs(raw) ** 2
        return np.array([padic_abs(x, v.p) for x in raw])

    def _plain_sup(self, ball: LocalBall) -> float:
        v = self.place
        if v.is_archimedean:
            return abs(complex(self.coeffs[0])) + sum(
                abs(complex(a)) * f.sup_bound(ball) for a, f in zip(self.coeffs[1:], self.fmap.components[v])
            )
        terms = [padic_abs(Fraction(self.coeffs[0]), v.p)]
        pairs = zip(self.coeffs[1:], self.fmap.components[v])
        terms += [padic_abs(Fraction(a), v.p) * f.sup_bound(ball) for a, f in pairs]
        return max(terms)

    def sup_bound(self, spec: MeasureSpec) -> float:
        s = self._plain_sup(spec.ball(self.place))
        return s**2 if self.place.kind == PlaceKind.COMPLEX else s

    def lipschitz(self, spec: MeasureSpec) -> float:
        v = self.place
        if not v.is_archimedean:
            return 0.0
        ball = spec.ball(v)
        lip = sum(abs(complex(a)) * f.lipschitz(ball) for a, f in zip(self.coeffs[1:], self.fmap.components[v]))
        if v.kind == PlaceKind.COMPLEX:
            # |.|_v is the squared modulus
            lip *= 2 * self._plain_sup(ball)
        return lip


class PolynomialFunction(LinearCombination):
    """A single polynomial g at one place."""

    def __init__(self, poly: Polynomial, place: Place):
        super().__init__(MapSpec({place: [poly]}), place, [0, 1])


class ScaledFunction(ScalarFunction):
    def __init__(self, inner: ScalarFunction, factor: float):
        self.inner = inner
        self.factor = abs(factor)

    def values(self, samples):
        return self.factor * self.inner.values(samples)

    def lipschitz(self, spec):
        return self.factor * self.inner.lipschitz(spec)

    def sup_bound(self, spec):
        return self.factor * self.inner.sup_bound(spec)


class AbsFunction(ScalarFunction):
    def __init__(self, inner: ScalarFunction):
        self.inner = inner

    def values(self, samples):
        return np.abs(self.inner.values(samples))

    def lipschitz(self, spec):
        return self.inner.lipschitz(spec)

    def sup_bound(self, spec):
        return self.inner.sup_bound(spec)


class SupFunction(ScalarFunction):
    def __init__(self, functions: Sequence[ScalarFunction]):
        if not functions:
            raise InvalidInputError("sup of an empty family")
        self.functions = list(functions)

    def values(self, samples):
        return np.max(np.vstack([f.values(samples) for f in self.functions]), axis=0)

    def lipschitz(self, spec):
        return max(f.lipschitz(spec) for f in self.functions)

    def sup_bound(self, spec):
        return max(f.sup_bound(spec) for f in self.functions)


class ProductFunction(ScalarFunction):
    """x -> f_1(x) ... f_m(x), each factor reading its own place."""

    def __init__(self, factors: Sequence[ScalarFunction]):
        if not factors:
            raise InvalidInputError("product of an empty family")
        self.factors = list(factors)

    def values(self, samples):
        out = np.ones(samples.size)
        for f in self.factors:
            out = out * f.values(samples)
        return out

    def lipschitz(self, spec):
        total = 0.0
        for i, f in enumerate(self.factors):
            lip = f.lipschitz(spec)
            if lip:
                total += lip * math.prod(g.sup_bound(spec) for j, g in enumerate(self.factors) if j != i)
        return total

    def sup_bound(self, spec):
        return math.prod(f.sup_bound(spec) for f in self.factors)


def sublevel_fraction(values: np.ndarray, eps: float) -> tuple[float, float]:
    """Fraction of samples with |f(x)| < eps and its binomial standard error."""
    N = len(values)
    frac = float(np.count_nonzero(np.asarray(values) < eps)) / N
    return frac, math.sqrt(frac * (1 - frac) / N)


def sublevel_fraction_on(f: ScalarFunction, spec: MeasureSpec, eps: float, N: int, seed: int) -> tuple[float, float]:
    return sublevel_fraction(f.values(sample_ball(spec, N, seed)), eps)


@dataclass
class GoodCell:
    ball_id: int
    function_id: int
    epsilon: float
    fraction: float
    stderr: float
    norm: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound + 3 * self.stderr - self.fraction

    @property
    def passed(self) -> bool:
        return self.margin >= 0

    def bound_at(self, C: float, alpha: float) -> float:
        if self.norm == 0:
            return math.inf
        return C * (self.epsilon / self.norm) ** alpha


@dataclass
class GoodCert:
    """Evidence that every grid cell satisfies fraction <= C (eps/||f||)^alpha + 3 stderr."""

    C: float
    alpha: float
    cells: list
    N: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(cell.passed for cell in self.cells)

    def passes_at(self, C: float, alpha: float) -> bool:
        """Re-evaluate the stored evidence at another (C, alpha)."""
        return all(cell.fraction <= cell.bound_at(C, alpha) + 3 * cell.stderr for cell in self.cells)

    def rows(self) -> list[dict]:
        return [
            {
                "ball_id": c.ball_id,
                "function_id": c.function_id,
                "epsilon": c.epsilon,
                "fraction": c.fraction,
                "stderr": c.stderr,
                "norm": c.norm,
                "bound": c.bound,
                "margin": c.margin,
                "pass": c.passed,
            }
            for c in self.cells
        ]


def estimate_sup(f: ScalarFunction, samples: SampleSet, values: np.ndarray | None = None) -> float:
    """Sample max of |f| inflated by the Lipschitz term over the sampling gap."""
    values = f.values(samples) if values is None else values
    gap = 0.0
    for b in samples.spec.balls:
        if b.place.is_archimedean:
            real_dim = b.dim * (2 if b.place.kind == PlaceKind.COMPLEX else 1)
            gap = max(gap, 2 * b.radius * samples.size ** (-1.0 / real_dim))
    return float(np.max(values)) + f.lipschitz(samples.spec) * gap


def certify_good(
    functions: Sequence[ScalarFunction],
    balls: Sequence[MeasureSpec],
    C: float,
    alpha: float,
    eps_grid: Sequence[float],
    N: int,
    seed: int,
) -> GoodCert:
    """Check the (C, alpha)-good inequality for every function, ball and epsilon of the grids."""
    if not functions or not balls or not eps_grid:
        raise InvalidInputError("certification grids must be nonempty")
    seeds = np.random.SeedSequence(seed).generate_state(len(balls))
    cells = []
    for b_id, (spec, s) in enumerate(zip(balls, seeds)):
        samples = sample_ball(spec, N, int(s))
        for f_id, f in enumerate(functions):
            values = f.values(samples)
            norm = estimate_sup(f, samples, values)
            for eps in eps_grid:
                frac, se = sublevel_fraction(values, eps)
                bound = C * (eps / norm) ** alpha if norm > 0 else math.inf
                cells.append(GoodCell(b_id, f_id, float(eps), frac, se, norm, bound))
    cert = GoodCert(C, alpha, cells, N, seed)
    logger.debug(f"certify_good (C={C}, alpha={alpha}): {'pass' if cert.passed else 'fail'} over {len(cells)} cells")
    return cert


def combination_family(fmap: MapSpec, v: Place, count: int, seed: int) -> list[LinearCombination]:
    """Linear combinations of 1, f_1, ..., f_n with coefficients on the unit sphere (axes first)."""
    n = fmap.n
    family = [LinearCombination(fmap, v, [1 if i == k else 0 for i in range(n + 1)]) for k in range(n + 1)]
    rng = _streams(seed, 1)[0]
    for _ in range(max(0, count - len(family))):
        if v.is_archimedean:
            a = rng.normal(size=n + 1)
            if v.kind == PlaceKind.COMPLEX:
                a = a + 1j * rng.normal(size=n + 1)
            a = a / np.linalg.norm(a)
            family.append(LinearCombination(fmap, v, list(a)))
        else:
            a = [int(x) for x in rng.integers(0, v.p**4, size=n + 1)]
            if all(x % v.p == 0 for x in a):
                a[0] = 1
            family.append(LinearCombination(fmap, v, a))
    return family


@dataclass
class ProductCert:
    candidate: tuple
    recertification: GoodCert | None
    confirmed: bool

    @property
    def pair(self):
        return self.candidate if self.confirmed else None


def combine_good_product(
    certs: Sequence[GoodCert],
    factors: Sequence[ScalarFunction] | None = None,
    balls: Sequence[MeasureSpec] | None = None,
    eps_grid: Sequence[float] | None = None,
    N: int = 10_000,
    seed: int = 0,
) -> ProductCert:
    """
    Candidate (sum C_i, min alpha_i / m) for the product f_1 ... f_m.

    If |f_1 ... f_m| < eps ||f_1|| ... ||f_m|| then some factor satisfies
    |f_i| < eps^{1/m} ||f_i||, and the union bound gives the candidate. It is
    then re-certified on the product space.
    """
    if not certs:
        raise InvalidInputError("combine_good_product needs at least one certificate")
    m = len(certs)
    if m == 1:
        return ProductCert((certs[0].C, certs[0].alpha), certs[0], certs[0].passed)
    C = sum(c.C for c in certs)
    alpha = min(c.alpha for c in certs) / m
    if factors is None or balls is None or eps_grid is None:
        raise InvalidInputError("re-certification needs the factor functions, balls and epsilon grid")
    recert = certify_good([ProductFunction(factors)], balls, C, alpha, eps_grid, N, seed)
    if not recert.passed:
        logger.warning(f"Product candidate (C={C:.4g}, alpha={alpha:.4g}) failed re-certification")
    return ProductCert((C, alpha), recert, recert.passed)


def check_comparable(
    f: ScalarFunction,
    g: ScalarFunction,
    c1: float,
    c2: float,
    cert: GoodCert,
    balls: Sequence[MeasureSpec],
    eps_grid: Sequence[float],
) -> GoodCert | None:
    """If c1 <= |f/g| <= c2 on the samples, re-certify g at (C (c2/c1)^alpha, alpha)."""
    seeds = np.random.SeedSequence(cert.seed).generate_state(len(balls))
    for spec, s in zip(balls, seeds):
        samples = sample_ball(spec, cert.N, int(s))
        fv, gv = f.values(samples), g.values(samples)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = fv / gv
        if np.any(~np.isfinite(ratio)) or ratio.min() < c1 or ratio.max() > c2:
            logger.warning("comparability bounds do not hold on the samples")
            return None
    return certify_good([g], balls, cert.C * (c2 / c1) ** cert.alpha, cert.alpha, eps_grid, cert.N, cert.seed)


@dataclass
class NonplanarEvidence:
    nonplanar: bool
    rank: int
    singular_values: list


def check_nonplanar(fmap: MapSpec, v: Place, samples: SampleSet, tau_rank: float | None = None) -> NonplanarEvidence:
    """Full rank n + 1 of the sample matrix with rows (1, f(x_s))."""
    n = fmap.n
    if samples.size < n + 1:
        raise InvalidInputError(f"need at least {n + 1} samples")
    tau_rank = get_settings().tau_rank if tau_rank is None else tau_rank
    if v.is_archimedean:
        Phi = np.asarray(fmap.design_matrix(samples, v))
        scale = np.max(np.abs(Phi), axis=0)
        scale[scale == 0] = 1.0
        sv = np.linalg.svd(Phi / scale, compute_uv=False)
        rank = int(np.sum(sv > tau_rank * sv[0])) if sv[0] > 0 else 0
        return NonplanarEvidence(rank == n + 1, rank, [float(s) for s in sv])
    rows = fmap.design_matrix(samples, v)[: max(4 * (n + 1), 16)]
    rank = Matrix([[Rational(c.numerator, c.denominator) for c in row] for row in rows]).rank()
    return NonplanarEvidence(rank == n + 1, int(rank), [])


def _sphere_net(v: Place, n: int, size: int, seed: int) -> list:
    """
    Coefficient net on the unit sphere of ||.||_{v,2}.

    Archimedean: the coordinate axes, then seeded uniform directions.
    Finite: every residue vector mod p^k whose first unit coordinate is 1,
    for the largest depth k that keeps the net within ``size``.
    """
    dim = n + 1
    if v.is_archimedean:
        net = [[1 if i == k else 0 for i in range(dim)] for k in range(dim)]
        rng = _streams(seed, 1)[0]
        while len(net) < size:
            a = rng.normal(size=dim)
            if v.kind == PlaceKind.COMPLEX:
                a = a + 1j * rng.normal(size=dim)
            net.append(list(a / np.linalg.norm(a)))
        return net
    p = v.p
    depth = 1
    while p ** ((depth + 1) * dim) <= size:
        depth += 1
    mod = p**depth
    net = []
    for idx in range(mod**dim):
        a = [(idx // mod**i) % mod for i in range(dim)]
        if next((x for x in a if x % p), None) == 1:
            net.append(a)
    return net


def estimate_rho_v(
    fmap: MapSpec,
    v: Place,
    ball: LocalBall,
    N: int,
    net_size: int,
    seed: int,
    conservative: bool = False,
    evidence: NonplanarEvidence | None = None,
) -> float:
    """
    min over a coefficient net of sup_x |a_0 + a_1 f_1(x) + ... + a_n f_n(x)|_v.

    With ``conservative`` the net and sampling gaps are subtracted at
    archimedean places so the estimate is biased low; it may reach 0.
    """
    spec = MeasureSpec((ball,))
    samples = sample_ball(spec, N, seed)
    evidence = evidence or check_nonplanar(fmap, v, samples)
    if not evidence.nonplanar:
        raise NonplanarityError(f"map is not established nonplanar at {v} (rank {evidence.rank})")
    n = fmap.n
    net = _sphere_net(v, n, net_size, seed)
    Phi = fmap.design_matrix(samples, v)

    if v.is_archimedean:
        A = np.array(net, dtype=complex if v.kind == PlaceKind.COMPLEX else float)
        vals = np.abs(Phi @ A.T)
        if v.kind == PlaceKind.COMPLEX:
            vals = vals**2
        rho = float(vals.max(axis=0).min())
        if conservative:
            lip_x = max((f.lipschitz(ball) for f in fmap.components[v]), default=0.0)
            real_dim = ball.dim * (2 if v.kind == PlaceKind.COMPLEX else 1)
            sample_gap = 2 * ball.radius * N ** (-1.0 / real_dim)
            net_gap = 2 * len(net) ** (-1.0 / max(n, 1)) if n else 0.0
            correction = math.sqrt(n + 1) * (lip_x * sample_gap + float(np.abs(Phi).max()) * net_gap)
            if v.kind == PlaceKind.COMPLEX:
                correction *= 2 * math.sqrt(rho)
            if correction >= rho:
                logger.warning(f"rho_v correction {correction:.3g} swallows the raw estimate {rho:.3g}")
            rho = max(rho - correction, 0.0)
        logger.debug(f"rho_v at {v.label}: {rho:.6g} over a net of {len(net)}")
        return rho

    best = math.inf
    for a in net:
        sup = max(padic_abs(sum(Fraction(c) * x for c, x in zip(a, row)), v.p) for row in Phi)
        best = min(best, sup)
    return best
