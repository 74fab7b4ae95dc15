"""
Explicit constants of the quantitative nondivergence bound and Monte Carlo
checks of the bound along flows g_t tau(f(x)) O_S^{n+1}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .dirichlet import DirichletInstance, RayPoint
from .exceptions import ConditionFailure, InvalidInputError
from .good_measures import GoodCert, MapSpec, MeasureSpec, SampleSet, sample_ball, sublevel_fraction
from .lattice_dynamics import (
    PrimitiveSubmodule,
    SLatticeBasis,
    correspondence_threshold,
    covolume_submodule,
    delta_lattice,
    flow_delta_batch,
)
from .number_field import NumberField, Place, PlaceKind, field_constant
from .parallel import ordered_map
from .s_adic import SBox, SConfig

logger = logging.getLogger(__name__)


def _sqrt_disc(K: NumberField) -> float:
    return math.sqrt(abs(K.discriminant))


def _place_counts(K: NumberField) -> tuple[int, int]:
    """(|S_r|, |S_c|)."""
    return K.real_place_count, K.complex_place_count


@dataclass
class QNConfig:
    m: int
    C: float
    alpha: float
    N_X: float
    D: float
    D_K: int
    rho: float
    eps_grid: list = field(default_factory=list)
    N: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise InvalidInputError("m must be positive")
        for name in ("C", "alpha", "N_X", "D", "rho"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        self.D_K = abs(int(self.D_K))
        self.eps_grid = sorted(float(e) for e in self.eps_grid)
        too_large = [e for e in self.eps_grid if e > self.eps_cap]
        if too_large:
            raise InvalidInputError(
                f"epsilon {too_large[0]} exceeds rho/sqrt(D_K) = {self.eps_cap:.6g}"
            )

    @property
    def eps_cap(self) -> float:
        return self.rho / math.sqrt(self.D_K)

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "C": repr(self.C),
            "alpha": repr(self.alpha),
            "N_X": repr(self.N_X),
            "D": repr(self.D),
            "D_K": self.D_K,
            "rho": repr(self.rho),
            "eps_grid": [repr(e) for e in self.eps_grid],
            "N": self.N,
            "seed": self.seed,
        }


def qn_rhs(cfg: QNConfig, eps: float, mu_B: float = 1.0) -> float:
    """m C (N_X D^2)^m (eps sqrt(D_K) / rho)^alpha mu(B)."""
    if eps < 0:
        raise InvalidInputError("epsilon must be nonnegative")
    if eps > cfg.eps_cap * (1 + 1e-12):
        raise InvalidInputError(f"epsilon {eps} exceeds rho/sqrt(D_K) = {cfg.eps_cap:.6g}")
    if eps == 0:
        return 0.0
    return cfg.m * cfg.C * (cfg.N_X * cfg.D**2) ** cfg.m * (eps * math.sqrt(cfg.D_K) / cfg.rho) ** cfg.alpha * mu_B


def rho_tilde(j: int, n: int, rho_v: Sequence[float], K: NumberField) -> float:
    """(sqrt D_K)^j const_K^{-(n+1)} prod_v rho_v."""
    if any(r < 0 for r in rho_v):
        raise InvalidInputError("rho_v must be nonnegative")
    return _sqrt_disc(K) ** j * field_constant(K) ** (-(n + 1)) * math.prod(rho_v)


def c2_lower_bound(j: int, t: RayPoint, rho_v: Mapping[Place, float], K: NumberField) -> float:
    """Lower bound for sup_B cov(h(x) Delta), rank j, along the flow at t."""
    scale = math.prod(float(c) for v in t.cfg.S for c in t.components[v][: t.m + t.n])
    return _sqrt_disc(K) ** j / scale * math.prod(rho_v[v] for v in t.cfg.S)


@dataclass
class PropConstants:
    rho_v: list
    rho_tilde: float
    rho: float
    C_tilde: float
    eps0: float

    def to_json(self) -> dict:
        return {
            "rho_v": [repr(r) for r in self.rho_v],
            "rho_tilde": repr(self.rho_tilde),
            "rho": repr(self.rho),
            "C_tilde": repr(self.C_tilde),
            "eps0": repr(self.eps0),
        }


def prop_constants(
    n: int,
    C: float,
    alpha: float,
    D: float,
    N_X: float,
    K: NumberField,
    rho_v: Sequence[float],
    j: int = 1,
) -> PropConstants:
    """rho = min(1, rho~), C~ and an eps0 with C~ eps0^alpha < 1 and eps0 <= rho/sqrt(D_K)."""
    if min(C, alpha, D, N_X) <= 0 or n < 1:
        raise InvalidInputError("constants must be positive")
    rt = rho_tilde(j, n, rho_v, K)
    if rt <= 0:
        raise InvalidInputError("rho~ vanishes; nonplanarity was not established at some place")
    rho = min(1.0, rt)
    s_r, s_c = _place_counts(K)
    sd = _sqrt_disc(K)
    C_tilde = C * (N_X * D**2) ** (n + 1) * (n + 1) ** (1 + alpha * s_r / 2 + alpha * s_c) * (sd / rho) ** alpha
    eps0 = min(rho / sd, (1 / C_tilde) ** (1 / alpha) * (1 - 1e-6))
    return PropConstants(list(rho_v), rt, rho, C_tilde, eps0)


@dataclass
class FlowFamily:
    """x -> g_t tau(f(x)) O_S^{n+1} for a map f and a ray point t with m = 1."""

    cfg: SConfig
    t: RayPoint
    fmap: MapSpec

    def __post_init__(self):
        if self.t.m != 1 or self.t.n != self.fmap.n:
            raise InvalidInputError("flow families need m = 1 and n equal to the number of component functions")

    @property
    def batchable(self) -> bool:
        return self.cfg.K.d == 0 and len(self.cfg.finite) <= 1

    def values(self, samples: SampleSet) -> dict:
        return {v: self.fmap.evaluate(samples, v) for v in self.cfg.S}

    def _local(self, c, v: Place):
        if v.kind == PlaceKind.REAL:
            return float(c)
        if v.kind == PlaceKind.COMPLEX:
            return complex(c)
        return self.cfg.K(Fraction(c))

    def instance(self, point: Mapping[Place, Sequence]) -> DirichletInstance:
        A = {v: [[self._local(c, v) for c in point[v]]] for v in self.cfg.S}
        return DirichletInstance(A, self.t, self.cfg)

    def __call__(self, point: Mapping[Place, Sequence]) -> SLatticeBasis:
        return SLatticeBasis.from_instance(self.instance(point))

    def deltas(self, values: Mapping[Place, Sequence], theta: float, cap=None) -> np.ndarray:
        """delta per sample row, inf where no point of content below theta exists."""
        if self.batchable:
            return flow_delta_batch(self.cfg, self.t, values, theta, cap)
        size = len(values[self.cfg.S[0]])
        out = np.empty(size)
        for i in range(size):
            result = delta_lattice(self({v: values[v][i] for v in self.cfg.S}), theta=theta, cap=cap)
            out[i] = result.value if result.value < theta else math.inf
        return out


def _points(samples: SampleSet, values: Mapping[Place, Sequence] | None = None) -> list[dict]:
    source = values if values is not None else samples.values
    places = list(source)
    return [{v: source[v][i] for v in places} for i in range(samples.size)]


def _delta_item(payload) -> float:
    L, theta, box, cap = payload
    result = delta_lattice(L, box=box, theta=theta, cap=cap)
    return result.value if result.value < theta else math.inf


@dataclass
class NondivRow:
    epsilon: float
    lhs: float
    stderr: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs - 3 * self.stderr <= self.rhs


@dataclass
class NondivReport:
    config: QNConfig
    rows: list
    c2: list = field(default_factory=list)
    truncation_height: float | None = None
    c1_certified: bool | None = None

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def diagnosis(self) -> str:
        if self.passed:
            return "bounded"
        if not self.c1_certified:
            return "uncertified-input"
        return "violation"

    def csv_rows(self) -> list[dict]:
        return [
            {"epsilon": r.epsilon, "lhs": r.lhs, "stderr": r.stderr, "rhs": r.rhs, "pass": r.passed}
            for r in self.rows
        ]

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "passed": self.passed,
            "diagnosis": self.diagnosis,
            "c2": self.c2,
            "truncation_height": self.truncation_height,
            "rows": [
                {k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
                for row in self.csv_rows()
            ],
        }


def qn_empirical_check(
    h: Callable[[Mapping[Place, Sequence]], SLatticeBasis] | FlowFamily,
    spec: MeasureSpec,
    deltas: Sequence[PrimitiveSubmodule],
    cfg: QNConfig,
    box: SBox | None = None,
    c2_floor: float | None = None,
    c2_samples: int = 500,
    truncation_height: float | None = None,
    good_cert: GoodCert | None = None,
    workers=None,
    cap=None,
) -> NondivReport:
    """
    Empirical mu{x in B : delta(h(x) O_S^m) < eps} / mu(B) against qn_rhs on the epsilon grid.

    ``h`` maps a sample point (place -> local coordinates) to a lattice
    basis. Raw bases need a search ``box``; flow families use the
    structured or batched content search. (C2) is checked first: the sample
    sup of cov(h(x) Delta) must reach ``c2_floor`` (default rho) for every
    Delta, and ConditionFailure is raised otherwise.
    """
    if not cfg.eps_grid:
        raise InvalidInputError("empty epsilon grid")
    samples = sample_ball(spec, cfg.N, cfg.seed)
    flow = h if isinstance(h, FlowFamily) else None
    values = flow.values(samples) if flow else None
    points = _points(samples, values)

    floor = cfg.rho if c2_floor is None else c2_floor
    c2 = []
    subset = points[: max(1, min(c2_samples, len(points)))]
    for delta in deltas:
        sup_cov = max(covolume_submodule(delta, h(x)) for x in subset)
        entry = {"j": delta.j, "plucker": [str(k) for k in delta.key()], "sup_cov": repr(sup_cov)}
        c2.append(entry)
        if sup_cov < floor:
            logger.error(f"(C2) fails: sup cov = {sup_cov:.6g} below floor {floor:.6g} for rank {delta.j}")
            raise ConditionFailure(f"sup of cov(h(x) Delta) = {sup_cov:.6g} is below the floor {floor:.6g}")

    theta = max(cfg.eps_grid) * (1 + 1e-9)
    if flow is not None:
        dvals = flow.deltas(values, theta, cap)
    else:
        payloads = [(h(x), theta, box, cap) for x in points]
        dvals = np.array(ordered_map(_delta_item, payloads, workers))

    rows = []
    for eps in cfg.eps_grid:
        lhs, se = sublevel_fraction(dvals, eps)
        row = NondivRow(eps, lhs, se, qn_rhs(cfg, eps))
        if not row.passed:
            logger.error(f"❌ Nondivergence bound exceeded at eps={eps}: {lhs:.6g} > {row.rhs:.6g}")
        rows.append(row)
    report = NondivReport(cfg, rows, c2, truncation_height, good_cert.passed if good_cert else None)
    logger.info(f"Nondivergence check over {len(rows)} epsilons: {report.diagnosis}")
    return report


@dataclass
class DIScanRow:
    t_index: int
    t_norm: float
    included: bool
    fraction: float
    stderr: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.fraction - 3 * self.stderr <= self.bound


@dataclass
class DIScanResult:
    eps: float
    threshold: float
    t0: float
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.included)

    def csv_rows(self) -> list[dict]:
        return [
            {
                "t_index": r.t_index,
                "t_norm": r.t_norm,
                "included": r.included,
                "lhs": r.fraction,
                "stderr": r.stderr,
                "rhs": r.bound,
                "pass": r.passed,
            }
            for r in self.rows
        ]


def _discan_item(payload) -> tuple[float, float]:
    family, values, threshold, cap = payload
    dvals = family.deltas(values, threshold, cap)
    return sublevel_fraction(dvals, threshold)


def di_measure_scan(
    fmap: MapSpec,
    spec: MeasureSpec,
    eps: float,
    schedule: Sequence[RayPoint],
    constants: PropConstants,
    alpha: float,
    N: int,
    seed: int,
    t0: float = 0.0,
    workers=None,
    cap=None,
) -> DIScanResult:
    """
    Per ray point, the fraction of sampled x whose flow lattice has delta below
    (n+1)^{|S_r|/2+|S_c|} eps, next to the bound C~ eps^alpha.
    """
    if not 0 < eps < 1:
        raise InvalidInputError("epsilon must lie in (0, 1)")
    if not schedule:
        raise InvalidInputError("empty ray schedule")
    cfg = schedule[0].cfg
    threshold = correspondence_threshold(cfg, fmap.n + 1, eps)
    samples = sample_ball(spec, N, seed)
    families = [FlowFamily(cfg, t, fmap) for t in schedule]
    values = families[0].values(samples)
    results = ordered_map(_discan_item, [(f, values, threshold, cap) for f in families], workers)

    bound = constants.C_tilde * eps**alpha
    rows = [
        DIScanRow(k, t.norm_inf, t.norm_inf > t0, frac, se, bound)
        for k, (t, (frac, se)) in enumerate(zip(schedule, results))
    ]
    logger.debug(f"di_measure_scan eps={eps}: fractions {[round(r.fraction, 6) for r in rows]}")
    return DIScanResult(eps, threshold, t0, rows)
