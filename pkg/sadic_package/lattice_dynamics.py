"""
Lattices g O_S^{m+n} in K_S^{m+n}: the unipotent and diagonal matrices of
the Dirichlet correspondence, shortest content, exterior powers and
covolumes of primitive submodules.
"""

from __future__ import annotations

import itertools
import logging
import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from sympy import gcd, primefactors
from sympy.combinatorics import Permutation

from .conf import get_settings
from .dirichlet import DirichletInstance, DirichletSolution, RayPoint, _row_value, is_improvable_at
from .exceptions import EnumerationCapExceeded, InvalidInputError
from .number_field import KElem, Place, PlaceKind, abs_value, embed, local_norm, places_over
from .s_adic import (
    PadicApprox,
    SBox,
    SConfig,
    enumerate_box,
    s_integer_candidates,
    value_group_exponent,
)

logger = logging.getLogger(__name__)


def _add(a, b):
    if a is None:
        return b
    return a + b


def _local(value, v: Place):
    return embed(value, v) if v.is_archimedean else value


def _matmul(g, h, v: Place):
    size = len(h)
    return [
        [reduce(_add, (_local(g[i][k], v) * _local(h[k][j], v) for k in range(size))) for j in range(len(h[0]))]
        for i in range(len(g))
    ]


def _matvec(g, z, v: Place):
    return [reduce(_add, (_local(g[i][k], v) * _local(z[k], v) for k in range(len(z)))) for i in range(len(g))]


def _parity(perm) -> int:
    return Permutation(list(perm)).signature()


def leibniz_det(g, v: Place):
    """det g by the Leibniz expansion, in the arithmetic of K_v."""
    size = len(g)
    total = None
    for perm in itertools.permutations(range(size)):
        term = reduce(operator.mul, (_local(g[i][perm[i]], v) for i in range(size)))
        total = _add(total, term if _parity(perm) > 0 else -term)
    return total


def correspondence_exponent(cfg: SConfig) -> float:
    """|S_r|/2 + |S_c|."""
    return cfg.n_real / 2 + cfg.n_complex


def correspondence_threshold(cfg: SConfig, dim: int, eps: float) -> float:
    return dim ** correspondence_exponent(cfg) * eps


@dataclass
class SLatticeBasis:
    """Per-place invertible matrices g^{(v)}; the lattice is g O_S^{dim}."""

    cfg: SConfig
    g: Mapping[Place, list]
    provenance: str = "raw"
    instance: DirichletInstance | None = None

    def __post_init__(self):
        sizes = {len(self.g[v]) for v in self.cfg.S}
        if len(sizes) != 1:
            raise InvalidInputError("basis matrices must share one size across places")

    @property
    def dim(self) -> int:
        return len(self.g[self.cfg.S[0]])

    @classmethod
    def identity(cls, cfg: SConfig, dim: int) -> "SLatticeBasis":
        K = cfg.K
        eye = [[K.one() if i == j else K.zero() for j in range(dim)] for i in range(dim)]
        return cls(cfg, {v: eye for v in cfg.S})

    @classmethod
    def from_instance(cls, inst: DirichletInstance) -> "SLatticeBasis":
        """g_{eps,delta} tau(A) for the canonical flow elements of t."""
        lattice = diag_flow(inst.t).compose(tau(inst.A, inst.cfg, inst.m, inst.n))
        lattice.provenance = "instance"
        lattice.instance = inst
        return lattice

    def compose(self, other: "SLatticeBasis") -> "SLatticeBasis":
        return SLatticeBasis(self.cfg, {v: _matmul(self.g[v], other.g[v], v) for v in self.cfg.S})

    def image(self, z: Sequence[KElem]) -> dict:
        return {v: _matvec(self.g[v], z, v) for v in self.cfg.S}

    def determinant(self, v: Place):
        return leibniz_det(self.g[v], v)


def content(image: Mapping[Place, Sequence]) -> float:
    return math.prod(float(local_norm(values, v)) for v, values in image.items())


def tau(
    A: Mapping[Place, Sequence[Sequence]], cfg: SConfig, m: int | None = None, n: int | None = None
) -> SLatticeBasis:
    """The block unipotent [[I_m, A_v], [0, I_n]] at every place."""
    first = A[cfg.S[0]]
    m = m or len(first)
    n = n or len(first[0])
    K = cfg.K
    g = {}
    for v in cfg.S:
        rows = A[v]
        if len(rows) != m or any(len(r) != n for r in rows):
            raise InvalidInputError(f"A_{v} must be {m} x {n}")
        matrix = []
        for i in range(m + n):
            row = []
            for j in range(m + n):
                if i < m and j >= m:
                    row.append(rows[i][j - m])
                else:
                    row.append(K.one() if i == j else K.zero())
            matrix.append(row)
        g[v] = matrix
    return SLatticeBasis(g=g, cfg=cfg, provenance="tau")


def canonical_element(value, v: Place):
    """An element of K_v with |.|_v equal to the given ray component."""
    if v.kind == PlaceKind.REAL:
        return float(value)
    if v.kind == PlaceKind.COMPLEX:
        return math.sqrt(float(value))
    k = -value_group_exponent(value, v)
    return v.pi**k


def diag_flow(t: RayPoint, values: Mapping[Place, Sequence] | None = None) -> SLatticeBasis:
    """g_{eps,delta} = diag((eps^{(1)})^{-1}, ..., (delta^{(n)})^{-1}) per place."""
    cfg = t.cfg
    K = cfg.K
    g = {}
    for v in cfg.S:
        comps = t.components[v]
        if values is not None:
            entries = list(values[v])
            for c, e in zip(comps, entries):
                actual = abs_value(e, v)
                if v.is_archimedean:
                    if abs(float(actual) - float(c)) > 1e-9 * float(c):
                        raise InvalidInputError(f"|{e}|_{v} = {actual} does not match {c}")
                elif Fraction(actual) != Fraction(c):
                    raise InvalidInputError(f"|{e}|_{v} = {actual} does not match {c}")
        else:
            entries = [canonical_element(c, v) for c in comps]
        size = len(entries)
        matrix = []
        for i in range(size):
            e = entries[i]
            if isinstance(e, KElem):
                if e.is_zero:
                    raise InvalidInputError("diagonal flow entries must be nonzero")
                inv = e.inverse()
            elif isinstance(e, PadicApprox):
                inv = e.inverse()
            else:
                if e == 0:
                    raise InvalidInputError("diagonal flow entries must be nonzero")
                inv = 1 / e
            matrix.append([inv if i == j else (0.0 if v.is_archimedean else K.zero()) for j in range(size)])
        g[v] = matrix
    return SLatticeBasis(cfg, g, provenance="diag")


@dataclass
class LatticePoint:
    z: tuple
    image: dict
    content: float

    def sort_key(self):
        return (self.content, tuple(c.sort_key() for c in self.z))


@dataclass
class DeltaResult:
    """Minimum content found, its witness and the region searched."""

    value: float
    witness: LatticePoint | None
    box: dict
    points_examined: int = 0

    def to_json(self) -> dict:
        return {
            "delta": repr(self.value),
            "witness": [c.coordinates() for c in self.witness.z] if self.witness else None,
            "box": self.box,
            "points_examined": self.points_examined,
        }


def _points_from_box(L: SLatticeBasis, theta: float, box: SBox, cap) -> tuple[list, int]:
    found = []
    vectors = enumerate_box(L.cfg, L.dim, box, cap)
    for z in vectors:
        if all(c.is_zero for c in z):
            continue
        image = L.image(z)
        c = content(image)
        if c < theta:
            found.append(LatticePoint(tuple(z), image, c))
    return found, len(vectors)


def _structured_box(inst: DirichletInstance, theta: float) -> tuple[SBox, dict]:
    """q-box and the per-row rounding bounds of the content-ball search."""
    cfg = inst.cfg
    safety = get_settings().box_safety
    scale = theta * safety
    q_bounds, p_bounds = {}, {}
    for v in cfg.S:
        if v.is_archimedean:
            q_bounds[v] = [float(c) * scale for c in inst.t.delta(v)]
            p_bounds[v] = [float(c) * scale for c in inst.t.epsilon(v)]
        else:
            q_bounds[v] = list(inst.t.delta(v))
            p_bounds[v] = list(inst.t.epsilon(v))
    return SBox(cfg, q_bounds), p_bounds


def _points_structured(L: SLatticeBasis, theta: float, cap) -> tuple[list, int, dict]:
    inst = L.instance
    cfg = inst.cfg
    cap = get_settings().enumeration_cap if cap is None else cap
    qbox, p_bounds = _structured_box(inst, theta)
    found = []
    examined = 0
    for q in enumerate_box(cfg, inst.n, qbox, cap):
        rows = []
        for i in range(inst.m):
            targets = {v: -_row_value(inst.A[v][i], q, v) for v in cfg.S}
            bounds = {v: p_bounds[v][i] for v in cfg.S}
            rows.append(s_integer_candidates(targets, bounds, cfg, cap))
        if not all(rows):
            continue
        for p in itertools.product(*rows):
            examined += 1
            if examined > cap:
                raise EnumerationCapExceeded(examined, cap, "content-ball search")
            z = tuple(p) + tuple(q)
            if all(c.is_zero for c in z):
                continue
            image = L.image(z)
            c = content(image)
            if c < theta:
                found.append(LatticePoint(z, image, c))
    p_json = {v.label: [repr(float(b)) if v.is_archimedean else str(b) for b in p_bounds[v]] for v in cfg.S}
    box = {"q": qbox.to_json(), "p": p_json}
    return found, examined, box


def lattice_points_in_content_ball(
    L: SLatticeBasis, theta: float, cap=None, box: SBox | None = None
) -> list[LatticePoint]:
    """Nonzero lattice points of content < theta within the search region, smallest first."""
    if theta <= 0:
        return []
    if box is not None:
        found, _ = _points_from_box(L, theta, box, cap)
    elif L.instance is not None:
        found, _, _ = _points_structured(L, theta, cap)
    else:
        raise InvalidInputError("a raw lattice basis needs an explicit search box")
    found.sort(key=LatticePoint.sort_key)
    return found


def delta_lattice(L: SLatticeBasis, box: SBox | None = None, theta: float | None = None, cap=None) -> DeltaResult:
    """Smallest content of a nonzero point in the declared search region."""
    if box is not None:
        found, examined = _points_from_box(L, math.inf if theta is None else theta, box, cap)
        region = {"z": box.to_json()}
    elif L.instance is not None:
        if theta is None:
            # a Dirichlet solution has every coordinate of norm <= 1
            theta = correspondence_threshold(L.cfg, L.dim, 1.0) * (1 + 1e-6)
        found, examined, region = _points_structured(L, theta, cap)
        region["theta"] = repr(theta)
    else:
        raise InvalidInputError("a raw lattice basis needs an explicit search box")

    if not found:
        logger.debug("No lattice point found in the search region; delta reported as inf")
        return DeltaResult(math.inf, None, region, examined)
    best = min(found, key=LatticePoint.sort_key)
    logger.debug(f"delta = {best.content:.6g} after {examined} candidates")
    return DeltaResult(best.content, best, region, examined)


@dataclass
class CorrespondenceReport:
    eps: float
    threshold: float
    witness: DirichletSolution | None
    point: LatticePoint | None
    verdict: str

    @property
    def content(self) -> float | None:
        return self.point.content if self.point else None

    def to_json(self) -> dict:
        return {
            "epsilon": repr(self.eps),
            "threshold": repr(self.threshold),
            "content": repr(self.content) if self.point else None,
            "witness": self.witness.to_json() if self.witness else None,
            "verdict": self.verdict,
        }


def check_correspondence(inst: DirichletInstance, eps: float, cap=None) -> CorrespondenceReport:
    """An eps-improvability witness gives a lattice point of content below the threshold."""
    threshold = correspondence_threshold(inst.cfg, inst.m + inst.n, eps)
    witness = is_improvable_at(inst, eps, cap)
    if witness is None:
        return CorrespondenceReport(eps, threshold, None, None, "not_improvable")
    L = SLatticeBasis.from_instance(inst)
    z = tuple(-y for y in witness.y) + tuple(witness.x)
    image = L.image(z)
    point = LatticePoint(z, image, content(image))
    tau_arch = get_settings().tau_arch
    if point.content < threshold:
        verdict = "strict"
    elif point.content <= threshold * (1 + tau_arch):
        verdict = "boundary"
    else:
        verdict = "violated"
        logger.error(f"❌ Lattice point content {point.content} exceeds threshold {threshold}")
    return CorrespondenceReport(eps, threshold, witness, point, verdict)


def index_sets(dim: int, j: int) -> list[tuple]:
    return list(itertools.combinations(range(dim), j))


@dataclass
class WedgeVec:
    """Coefficients w_I on e_I, I a sorted j-subset of {0, ..., dim-1}, per place."""

    j: int
    dim: int
    coeffs: dict = field(default_factory=dict)

    def at(self, v: Place) -> dict:
        return self.coeffs[v]

    def content(self) -> float:
        return math.prod(float(local_norm(list(c.values()), v)) for v, c in self.coeffs.items())


def wedge_action(g, w: Mapping[tuple, object], structure: str = "generic", v: Place | None = None) -> dict:
    """
    Coefficients of (wedge^j g) w.

    ``unipotent`` expects g = identity plus a first row (0, f_1, ..., f_n);
    ``diagonal`` expects a diagonal g; ``generic`` expands every j x j minor.
    """
    loc = (lambda x: _local(x, v)) if v is not None else (lambda x: x)
    dim = len(g)
    out: dict = {}

    if structure == "unipotent":
        for I, coeff in w.items():
            out[I] = _add(out.get(I), loc(coeff))
            if 0 in I:
                continue
            for k, i in enumerate(I):
                J = tuple(sorted((set(I) - {i}) | {0}))
                term = loc(g[0][i]) * loc(coeff)
                out[J] = _add(out.get(J), term if k % 2 == 0 else -term)
        return out

    if structure == "diagonal":
        for I, coeff in w.items():
            scale = reduce(operator.mul, (loc(g[i][i]) for i in I))
            out[I] = scale * loc(coeff)
        return out

    if structure != "generic":
        raise InvalidInputError(f"unknown wedge structure '{structure}'")
    j = len(next(iter(w))) if w else 0
    for I, coeff in w.items():
        for J in itertools.combinations(range(dim), j):
            block = [[g[r][c] for c in I] for r in J]
            minor = leibniz_det(block, v) if v is not None else _plain_det(block)
            out[J] = _add(out.get(J), minor * loc(coeff))
    return out


def _plain_det(g):
    size = len(g)
    total = None
    for perm in itertools.permutations(range(size)):
        term = reduce(operator.mul, (g[i][perm[i]] for i in range(size)))
        total = _add(total, term if _parity(perm) > 0 else -term)
    return total


def plucker(basis: Sequence[Sequence[KElem]], m: int) -> dict:
    """w_I = det of the rows I of the m x j matrix whose columns are the basis vectors."""
    j = len(basis)
    return {
        I: _plain_det([[basis[col][row] for col in range(j)] for row in I])
        for I in itertools.combinations(range(m), j)
    }


@dataclass
class PrimitiveSubmodule:
    cfg: SConfig
    m: int
    basis: tuple

    @property
    def j(self) -> int:
        return len(self.basis)

    @property
    def wedge(self) -> dict:
        if not hasattr(self, "_wedge"):
            self._wedge = plucker(self.basis, self.m)
        return self._wedge

    @classmethod
    def full(cls, cfg: SConfig, m: int) -> "PrimitiveSubmodule":
        K = cfg.K
        basis = tuple(tuple(K.one() if r == c else K.zero() for r in range(m)) for c in range(m))
        return cls(cfg, m, basis)

    def wedge_vec(self) -> WedgeVec:
        return WedgeVec(self.j, self.m, {v: dict(self.wedge) for v in self.cfg.S})

    def key(self) -> tuple:
        return _normalized_plucker(self.wedge)


def _normalized_plucker(w: Mapping[tuple, KElem]) -> tuple:
    lead = next(c for c in w.values() if not c.is_zero)
    return tuple((I, (c / lead).sort_key()) for I, c in sorted(w.items()))


def is_primitive(w: Mapping[tuple, KElem], cfg: SConfig) -> bool:
    """The O_S-content of the Pluecker coordinates is a unit."""
    nonzero = [c for c in w.values() if not c.is_zero]
    if not nonzero:
        return False
    g = 0
    for c in nonzero:
        g = gcd(g, c.norm().numerator)
    g = int(g)
    in_S = set(cfg.finite)
    for p in (primefactors(g) if g > 1 else []):
        for v in places_over(cfg.K, p):
            if v in in_S:
                continue
            if min(v.valuation(c) for c in nonzero) > 0:
                return False
    return True


def covolume_submodule(delta: PrimitiveSubmodule, h: SLatticeBasis, structure: str = "generic") -> float:
    """(sqrt|D_K|)^j c(wedge^j h w)."""
    cfg = h.cfg
    if h.dim != delta.m:
        raise InvalidInputError("submodule and lattice dimensions differ")
    total = math.sqrt(abs(cfg.K.discriminant)) ** delta.j
    for v in cfg.S:
        coeffs = wedge_action(h.g[v], delta.wedge, structure, v)
        total *= float(local_norm(list(coeffs.values()), v))
    return total


def covolume_lattice(L: SLatticeBasis) -> float:
    """(sqrt|D_K|)^dim c(det g)."""
    total = math.sqrt(abs(L.cfg.K.discriminant)) ** L.dim
    for v in L.cfg.S:
        total *= float(abs_value(L.determinant(v), v))
    return total


def enumerate_primitive_submodules(cfg: SConfig, m: int, j: int, height: float, cap=None) -> list[PrimitiveSubmodule]:
    """Primitive rank-j submodules spanned by vectors of coordinates bounded by ``height``."""
    if j < 1 or j > m:
        raise InvalidInputError(f"rank must satisfy 1 <= j <= m, got j={j}, m={m}")
    if j == m:
        return [PrimitiveSubmodule.full(cfg, m)]
    cap = get_settings().enumeration_cap if cap is None else cap
    bounds = {v: float(height) if v.is_archimedean else Fraction(1) for v in cfg.S}
    vectors = [
        x for x in enumerate_box(cfg, m, SBox(cfg, bounds), cap)
        if any(not c.is_zero for c in x)
        and next(c for c in x if not c.is_zero).sort_key() > (0, 0)
    ]
    combos = math.comb(len(vectors), j)
    if combos > cap:
        raise EnumerationCapExceeded(combos, cap, "submodule enumeration")

    seen = {}
    for chosen in itertools.combinations(vectors, j):
        w = plucker(chosen, m)
        if not is_primitive(w, cfg):
            continue
        key = _normalized_plucker(w)
        if key not in seen:
            seen[key] = PrimitiveSubmodule(cfg, m, tuple(chosen))
    result = list(seen.values())
    logger.debug(f"{len(result)} primitive rank-{j} submodules of O_S^{m} at height {height}")
    return result


def flow_delta_batch(
    cfg: SConfig,
    t: RayPoint,
    samples: Mapping[Place, Sequence[Sequence]],
    theta: float | None = None,
    cap=None,
) -> np.ndarray:
    """
    delta(g_{eps,delta} tau(f(x)) O_S^{n+1}) for a batch of points f(x) over K = Q.

    ``samples[v]`` holds one row (f_1(x), ..., f_n(x)) per sample: floats at
    the real place and p-integral rationals at the finite place. Entries of
    the result are inf where no point of content below ``theta`` exists.
    """
    if cfg.K.d != 0 or t.m != 1 or len(cfg.finite) > 1:
        raise InvalidInputError("the batched delta path supports K = Q, m = 1 and at most one finite place")
    cap = get_settings().enumeration_cap if cap is None else cap
    n = t.n
    arch = cfg.arch_place
    if theta is None:
        theta = correspondence_threshold(cfg, n + 1, 1.0) * (1 + 1e-6)
    F = np.asarray(samples[arch], dtype=float).reshape(-1, n)
    N = F.shape[0]

    safety = get_settings().box_safety
    q_bounds = {arch: [float(c) * theta * safety for c in t.delta(arch)]}
    for v in cfg.finite:
        q_bounds[v] = list(t.delta(v))
    Q = [
        q for q in enumerate_box(cfg, n, SBox(cfg, q_bounds), cap)
        if any(not c.is_zero for c in q) and next(c for c in q if not c.is_zero).a > 0
    ]
    if N * max(1, len(Q)) > 50 * cap:
        raise EnumerationCapExceeded(N * len(Q), 50 * cap, "batched content search")

    t1 = float(t.epsilon(arch)[0])
    t_delta = np.array([float(c) for c in t.delta(arch)])
    # q = 0: the point (1, 0, ..., 0) after S-unit normalization
    best = np.full(N, 1.0 / math.prod(float(t.epsilon(v)[0]) for v in cfg.S))

    if cfg.finite:
        v = cfg.finite[0]
        p = v.p
        a = max(0, max(value_group_exponent(c, v) for c in t.delta(v)))
        b = -value_group_exponent(t.epsilon(v)[0], v)
        D = p**a
        M = p ** (a + b)
        if M >= 2**31:
            raise InvalidInputError(f"modulus {p}^{a + b} too large for the batched delta path")
        residues = np.array(
            [[_residue_mod(Fraction(c), p, M) for c in row] for row in samples[v]], dtype=np.int64
        ).reshape(-1, n)
    else:
        D, M = 1, 1
        residues = np.zeros((N, n), dtype=np.int64)

    for q in Q:
        Qint = [int(c.a * D) for c in q]
        qf = np.array([float(c.a) for c in q])
        fq = F @ qf
        c = np.zeros(N, dtype=np.int64)
        for jj, qi in enumerate(Qint):
            c = (c + residues[:, jj] * (qi % M)) % M
        c = (-c) % M
        target = -fq * D
        P = c + M * np.round((target - c) / M)
        r = P / D + fq
        arch_norm = np.sqrt((r / t1) ** 2 + np.sum((qf / t_delta) ** 2))
        np.minimum(best, arch_norm, out=best)

    best[best >= theta] = np.inf
    return best


def _residue_mod(x: Fraction, p: int, M: int) -> int:
    if x.denominator % p == 0:
        raise InvalidInputError(f"sample value {x} is not {p}-integral")
    return (x.numerator * pow(x.denominator, -1, M)) % M
