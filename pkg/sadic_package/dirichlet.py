"""
Dirichlet systems over K_S: ray points of the positive chamber, an exhaustive
solver for the simultaneous approximation system and the epsilon-improvability
testers built on top of it.
"""

from __future__ import annotations

import logging
import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Mapping, Sequence

from .conf import get_settings
from .exceptions import InvalidInputError, TheoremViolation
from .number_field import KElem, Place, abs_value, embed, field_constant
from .parallel import ordered_map
from .s_adic import (
    PadicApprox,
    SBox,
    SConfig,
    enumerate_box,
    local_leq,
    nearest_s_integer,
    snap_to_value_group,
    value_group_exponent,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RayPoint:
    """t = (t_v^{(1)}, ..., t_v^{(m+n)})_{v in S}; the first m entries bound A x - y, the last n bound x."""

    cfg: SConfig
    m: int
    n: int
    components: Mapping[Place, tuple]

    def __post_init__(self):
        comps = {}
        for v in self.cfg.S:
            if v not in self.components:
                raise InvalidInputError(f"ray point has no components at {v}")
            values = tuple(self.components[v])
            if len(values) != self.m + self.n:
                raise InvalidInputError(f"expected {self.m + self.n} components at {v}, got {len(values)}")
            if v.is_archimedean:
                values = tuple(float(c) for c in values)
            else:
                values = tuple(Fraction(c) for c in values)
            comps[v] = values
        object.__setattr__(self, "components", comps)
        self.validate()

    def validate(self):
        tol = 1e-9
        for v, values in self.components.items():
            if any(c <= 0 for c in values):
                raise InvalidInputError(f"ray point components must be positive at {v}")
            if any(c >= 1 for c in values[: self.m]):
                raise InvalidInputError(f"contracting components at {v} must be < 1")
            if any(c < 1 for c in values[self.m:]):
                raise InvalidInputError(f"expanding components at {v} must be >= 1")
            if not v.is_archimedean:
                for c in values:
                    value_group_exponent(c, v)
        target = field_constant(self.cfg.K) ** (self.m + self.n)
        total = math.prod(float(c) for values in self.components.values() for c in values)
        if abs(total - target) > tol * target:
            raise InvalidInputError(
                f"ray point product {total:.12g} differs from const_K^(m+n) = {target:.12g}"
            )

    def epsilon(self, v: Place) -> tuple:
        return self.components[v][: self.m]

    def delta(self, v: Place) -> tuple:
        return self.components[v][self.m:]

    def projection_norm(self, v: Place) -> float:
        """||p_v(t)||_inf."""
        return float(max(self.components[v]))

    @property
    def norm_inf(self) -> float:
        return max(self.projection_norm(v) for v in self.cfg.S)

    def to_json(self) -> dict:
        return {
            v.label: [repr(c) if v.is_archimedean else str(c) for c in values]
            for v, values in self.components.items()
        }


def central_ray_point(
    cfg: SConfig,
    m: int,
    n: int,
    scales: Mapping[Place, object],
    finite_epsilon: Mapping[Place, object] | None = None,
) -> RayPoint:
    """
    A point of the central ray with |delta_v|_v = scales[v].

    Finite places default to delta = 1 and epsilon = p^-f; the archimedean
    epsilon is solved from the product constraint.
    """
    if m < 1 or n < 1:
        raise InvalidInputError("m and n must be positive")
    finite_epsilon = finite_epsilon or {}
    arch = cfg.arch_place
    comps = {}
    rest = 1.0
    for v in cfg.finite:
        delta = Fraction(scales.get(v, 1))
        eps = Fraction(finite_epsilon.get(v, Fraction(1, v.residue_size)))
        value_group_exponent(delta, v)
        value_group_exponent(eps, v)
        comps[v] = (eps,) * m + (delta,) * n
        rest *= float(eps) ** m * float(delta) ** n
    if arch not in scales:
        raise InvalidInputError("an archimedean scale is required")
    delta_arch = float(scales[arch])
    if delta_arch <= 0:
        raise InvalidInputError("scales must be positive")
    target = field_constant(cfg.K) ** (m + n)
    eps_arch = (target / (rest * delta_arch**n)) ** (1.0 / m)
    if eps_arch >= 1 or delta_arch < 1:
        raise InvalidInputError(
            f"no central ray point with delta_inf={delta_arch}: solved epsilon_inf={eps_arch:.6g} "
            "violates the chamber conditions"
        )
    comps[arch] = (eps_arch,) * m + (delta_arch,) * n
    return RayPoint(cfg, m, n, comps)


def central_ray_schedule(
    cfg: SConfig,
    m: int,
    n: int,
    count: int,
    start: float = 2.0,
    ratio: float = 2.0,
    finite_step: int = 1,
) -> list[RayPoint]:
    """Geometric archimedean scales and unit steps in the finite exponents."""
    if count < 1:
        raise InvalidInputError("schedule length must be positive")
    schedule = []
    for k in range(count):
        scales = {cfg.arch_place: start * ratio**k}
        for v in cfg.finite:
            scales[v] = Fraction(v.residue_size) ** (k * finite_step)
        schedule.append(central_ray_point(cfg, m, n, scales))
    return schedule


@dataclass
class DirichletInstance:
    """A = (A_v)_{v in S}, each an m x n matrix over K_v, and a ray point t."""

    A: Mapping[Place, Sequence[Sequence]]
    t: RayPoint
    cfg: SConfig

    def __post_init__(self):
        for v in self.cfg.S:
            rows = self.A.get(v)
            if rows is None:
                raise InvalidInputError(f"matrix A has no component at {v}")
            if len(rows) != self.m or any(len(r) != self.n for r in rows):
                raise InvalidInputError(f"A_{v} must be {self.m} x {self.n}")

    @property
    def m(self) -> int:
        return self.t.m

    @property
    def n(self) -> int:
        return self.t.n

    def with_ray(self, t: RayPoint) -> "DirichletInstance":
        return DirichletInstance(self.A, t, self.cfg)


@dataclass
class DirichletSolution:
    x: tuple
    y: tuple
    row_residuals: list = field(default_factory=list)
    column_contents: list = field(default_factory=list)
    factor: float = 1.0

    @property
    def residual_content(self) -> float:
        return max(self.row_residuals) if self.row_residuals else 0.0

    def to_json(self) -> dict:
        return {
            "x": [c.coordinates() for c in self.x],
            "y": [c.coordinates() for c in self.y],
            "row_residuals": [repr(r) for r in self.row_residuals],
            "column_contents": [repr(c) for c in self.column_contents],
            "factor": repr(self.factor),
        }


def vector_instance(y_vec: Mapping[Place, Sequence], t: RayPoint, cfg: SConfig) -> DirichletInstance:
    """A vector y in K_S^n read as a 1 x n matrix."""
    return DirichletInstance({v: [list(y_vec[v])] for v in cfg.S}, t, cfg)


def _scaled_bound(value, factor: float, v: Place):
    if v.is_archimedean:
        return float(value) * factor**v.local_degree
    if factor == 1:
        return Fraction(value)
    return snap_to_value_group(Fraction(value) * Fraction(factor) ** v.local_degree, v)


def _is_normalized(x: Sequence[KElem]) -> bool:
    for c in x:
        if not c.is_zero:
            return c.sort_key() > (0, 0)
    return False


def _row_value(row: Sequence, x: Sequence[KElem], v: Place):
    """A_v^{(i)} x as an element of K_v (exact when every entry is a field element)."""
    if all(isinstance(a, KElem) for a in row):
        return reduce(operator.add, (a * xj for a, xj in zip(row, x)))
    if v.is_archimedean:
        return sum(embed(a, v) * embed(xj, v) for a, xj in zip(row, x))
    terms = []
    for a, xj in zip(row, x):
        if isinstance(a, (KElem, PadicApprox)):
            terms.append(a * xj)
        else:
            terms.append(PadicApprox.from_rational(Fraction(a), v.p, place=v) * xj)
    return reduce(operator.add, terms)


def _difference(value, y: KElem, v: Place):
    if isinstance(value, (KElem, PadicApprox)):
        return value - y
    return value - embed(y, v)


def _bounds(inst: DirichletInstance, factor: float):
    tau = get_settings().tau_arch
    rows = {v: [_scaled_bound(c, factor, v) for c in inst.t.epsilon(v)] for v in inst.cfg.S}
    cols = {}
    for v in inst.cfg.S:
        cols[v] = [
            _scaled_bound(c, factor, v) * (1 + tau) if v.is_archimedean else _scaled_bound(c, factor, v)
            for c in inst.t.delta(v)
        ]
    return rows, cols


def _search(inst: DirichletInstance, factor: float, cap=None) -> DirichletSolution | None:
    cfg = inst.cfg
    row_bounds, col_bounds = _bounds(inst, factor)
    box = SBox(cfg, col_bounds)
    candidates = enumerate_box(cfg, inst.n, box, cap)
    logger.debug(f"Dirichlet search over {len(candidates)} vectors at factor {factor}")

    for x in candidates:
        if not _is_normalized(x):
            continue
        y = []
        for i in range(inst.m):
            targets = {v: _row_value(inst.A[v][i], x, v) for v in cfg.S}
            bounds = {v: row_bounds[v][i] for v in cfg.S}
            yi = nearest_s_integer(targets, bounds, cfg, cap)
            if yi is None:
                break
            y.append(yi)
        else:
            solution = _solution(inst, tuple(x), tuple(y), factor)
            verify_solution(inst, solution, factor)
            return solution
    return None


def _solution(inst: DirichletInstance, x, y, factor) -> DirichletSolution:
    cfg = inst.cfg
    residuals = []
    for i in range(inst.m):
        content = 1.0
        for v in cfg.S:
            diff = _difference(_row_value(inst.A[v][i], x, v), y[i], v)
            content *= float(abs_value(diff, v))
        residuals.append(content)
    columns = [math.prod(float(abs_value(xj, v)) for v in cfg.S) for xj in x]
    return DirichletSolution(x, y, residuals, columns, factor)


def verify_solution(inst: DirichletInstance, solution: DirichletSolution, factor: float = 1.0) -> bool:
    """Re-check every constraint; a failure is an internal invariant violation."""
    cfg = inst.cfg
    row_bounds, _ = _bounds(inst, factor)
    for v in cfg.S:
        for j, xj in enumerate(solution.x):
            if not local_leq(xj, _scaled_bound(inst.t.delta(v)[j], factor, v), v):
                raise TheoremViolation(f"witness coordinate x_{j} violates its bound at {v}")
        for i in range(inst.m):
            diff = _difference(_row_value(inst.A[v][i], solution.x, v), solution.y[i], v)
            if not local_leq(diff, row_bounds[v][i], v):
                raise TheoremViolation(f"witness row {i} violates its bound at {v}")
    if all(c.is_zero for c in solution.x):
        raise TheoremViolation("witness x is zero")
    return True


def solve_dirichlet(inst: DirichletInstance, cap=None) -> DirichletSolution:
    """First (x, y) in enumeration order solving the system; absence is a falsification event."""
    solution = _search(inst, 1.0, cap)
    if solution is None:
        logger.error(f"❌ No Dirichlet solution for ray point {inst.t.to_json()}")
        raise TheoremViolation("exhaustive search found no solution of the Dirichlet system")
    return solution


def is_improvable_at(inst: DirichletInstance, eps: float, cap=None) -> DirichletSolution | None:
    """A witness for the system with both sides tightened by eps, or None."""
    if not 0 < eps <= 1:
        raise InvalidInputError(f"epsilon must lie in (0, 1), got {eps}")
    if eps == 1:
        return solve_dirichlet(inst, cap)
    return _search(inst, eps, cap)


@dataclass
class ScanRow:
    t_index: int
    t: RayPoint
    included: bool
    improvable: bool
    witness: DirichletSolution | None = None


@dataclass
class ScanResult:
    eps: float
    t0: float
    rows: list
    aggregate: bool

    @property
    def tested(self) -> list:
        return [row for row in self.rows if row.included]


def _check_unbounded(schedule: Sequence[RayPoint]):
    if len(schedule) < 2:
        return
    for v in schedule[0].cfg.S:
        norms = [t.projection_norm(v) for t in schedule]
        if not any(b > a for a, b in zip(norms, norms[1:])):
            raise InvalidInputError(f"schedule projection at {v} never increases")


def _scan_item(payload):
    inst, eps, cap = payload
    return is_improvable_at(inst, eps, cap)


def scan_di(
    A: Mapping[Place, Sequence[Sequence]],
    cfg: SConfig,
    schedule: Sequence[RayPoint],
    eps: float,
    t0: float = 0.0,
    workers=None,
    cap=None,
) -> ScanResult:
    """Per-t improvability along a schedule; the aggregate holds iff every t past t0 is improvable."""
    if not schedule:
        raise InvalidInputError("empty ray schedule")
    _check_unbounded(schedule)
    included = [t.norm_inf > t0 for t in schedule]
    if not any(included):
        raise InvalidInputError(f"no ray point of the schedule lies past t0={t0}")
    payloads = [(DirichletInstance(A, t, cfg), eps, cap) for t in schedule]
    witnesses = ordered_map(_scan_item, payloads, workers)
    rows = [
        ScanRow(k, t, inc, w is not None, w)
        for k, (t, inc, w) in enumerate(zip(schedule, included, witnesses))
    ]
    aggregate = all(row.improvable for row in rows if row.included)
    logger.debug(f"scan_di eps={eps}: {sum(r.improvable for r in rows)}/{len(rows)} improvable")
    return ScanResult(eps, t0, rows, aggregate)


def ray_grid(cfg: SConfig, m: int, n: int, scale_lists: Mapping[Place, Sequence]) -> list[RayPoint]:
    """Central ray points over the product of per-place scale choices; infeasible ones are skipped."""
    places = list(cfg.S)
    grid = []

    def build(k, chosen):
        if k == len(places):
            try:
                grid.append(central_ray_point(cfg, m, n, dict(chosen)))
            except InvalidInputError:
                pass
            return
        v = places[k]
        for scale in scale_lists.get(v, [1]):
            chosen[v] = scale
            build(k + 1, chosen)
        chosen.pop(v, None)

    build(0, {})
    return grid


def scan_dimp0(
    A: Mapping[Place, Sequence[Sequence]],
    cfg: SConfig,
    eps: float,
    M: float,
    grid: Sequence[RayPoint],
    workers=None,
    cap=None,
) -> ScanResult:
    """Improvability at every grid point whose delta components all have |delta_v|_v >= M."""
    if M < 1:
        raise InvalidInputError("M must be at least 1")
    deep = [t for t in grid if all(float(c) >= M for v in cfg.S for c in t.delta(v))]
    if not deep:
        raise InvalidInputError(f"no grid point has every |delta_v|_v >= {M}")
    payloads = [(DirichletInstance(A, t, cfg), eps, cap) for t in deep]
    witnesses = ordered_map(_scan_item, payloads, workers)
    rows = [ScanRow(k, t, True, w is not None, w) for k, (t, w) in enumerate(zip(deep, witnesses))]
    return ScanResult(eps, float(M), rows, all(r.improvable for r in rows))


def improvability_profile(
    A: Mapping[Place, Sequence[Sequence]],
    cfg: SConfig,
    schedule: Sequence[RayPoint],
    eps_grid: Sequence[float],
    t0: float = 0.0,
    workers=None,
    cap=None,
) -> dict:
    """Aggregate verdict per epsilon and the smallest epsilon at which it holds."""
    if not eps_grid:
        raise InvalidInputError("empty epsilon grid")
    verdicts = {}
    for eps in sorted(eps_grid):
        verdicts[eps] = scan_di(A, cfg, schedule, eps, t0, workers, cap).aggregate
    holding = [eps for eps, ok in verdicts.items() if ok]
    return {"verdicts": verdicts, "smallest": min(holding) if holding else None}
