import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from sadic_package.dirichlet import (
    DirichletInstance,
    RayPoint,
    central_ray_point,
    central_ray_schedule,
    improvability_profile,
    is_improvable_at,
    ray_grid,
    scan_di,
    scan_dimp0,
    solve_dirichlet,
    vector_instance,
    verify_solution,
)
from sadic_package.exceptions import InvalidInputError
from sadic_package.number_field import NumberField, field_constant
from sadic_package.parallel import ordered_map
from sadic_package.s_adic import SConfig

PHI = (1 + math.sqrt(5)) / 2

# at most two finite places, so |S| <= 3
PRIMES = {0: [(), (2,), (3,), (5,), (2, 3), (2, 5), (3, 5)], 1: [(), (2,), (3,), (5,), (2, 3)]}
EPS_GRID = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0]


@st.composite
def dirichlet_instances(draw):
    d = draw(st.sampled_from([0, 1]))
    K = NumberField(d)
    cfg = SConfig.from_primes(K, draw(st.sampled_from(PRIMES[d])))
    coords = st.fractions(min_value=-3, max_value=3, max_denominator=6)
    a = K(draw(coords), draw(coords) if d else 0)
    A = {v: [[a]] for v in cfg.S}
    if draw(st.booleans()):
        reals = st.floats(min_value=-3, max_value=3, allow_nan=False)
        A[cfg.arch_place] = [[draw(reals) if d == 0 else complex(draw(reals), draw(reals))]]
    lower = field_constant(K) ** 2 * math.prod(v.residue_size for v in cfg.finite)
    t = central_ray_point(cfg, 1, 1, {cfg.arch_place: lower * draw(st.floats(min_value=1.5, max_value=8.0))})
    return DirichletInstance(A, t, cfg)


def scalar_instance(cfg, a, delta):
    t = central_ray_point(cfg, 1, 1, {cfg.arch_place: delta})
    return DirichletInstance({v: [[a]] for v in cfg.S}, t, cfg)


class TestRayPoints:
    def test_central_ray_point(self, q_inf):
        t = central_ray_point(q_inf, 1, 1, {q_inf.arch_place: 5})
        assert t.epsilon(q_inf.arch_place) == pytest.approx((0.2,))
        assert t.delta(q_inf.arch_place) == (5.0,)
        assert t.norm_inf == 5.0

    def test_finite_defaults(self, q_inf_2):
        inf, two = q_inf_2.S
        t = central_ray_point(q_inf_2, 1, 1, {inf: 4})
        assert t.components[two] == (Fraction(1, 2), Fraction(1))
        assert t.epsilon(inf) == pytest.approx((0.5,))

    def test_chamber_conditions(self, q_inf):
        inf = q_inf.arch_place
        with pytest.raises(InvalidInputError):
            RayPoint(q_inf, 1, 1, {inf: (1.0, 1.0)})
        with pytest.raises(InvalidInputError):
            RayPoint(q_inf, 1, 1, {inf: (0.5, 3.0)})
        with pytest.raises(InvalidInputError):
            central_ray_point(q_inf, 1, 1, {inf: 0.5})

    def test_finite_components_in_value_group(self, q_inf_2):
        inf, two = q_inf_2.S
        with pytest.raises(InvalidInputError):
            RayPoint(q_inf_2, 1, 1, {inf: (0.5, 6.0), two: (Fraction(1, 3), Fraction(1))})

    def test_schedule_grows(self, q_inf_2):
        schedule = central_ray_schedule(q_inf_2, 1, 2, 4)
        norms = [t.norm_inf for t in schedule]
        assert norms == sorted(norms)
        two = q_inf_2.finite[0]
        assert [t.delta(two)[0] for t in schedule] == [1, 2, 4, 8]


class TestSolver:
    def test_sqrt2(self, q_inf, Q):
        solution = solve_dirichlet(scalar_instance(q_inf, math.sqrt(2), 5))
        assert solution.x == (Q(2),)
        assert solution.y == (Q(3),)
        assert solution.row_residuals[0] == pytest.approx(abs(2 * math.sqrt(2) - 3))

    def test_golden_ratio(self, q_inf, Q):
        inst = scalar_instance(q_inf, PHI, 13)
        solution = solve_dirichlet(inst)
        assert (solution.x, solution.y) == ((Q(8),), (Q(13),))
        assert is_improvable_at(inst, 1.0).x == (Q(8),)
        assert is_improvable_at(inst, 0.5) is None

    def test_rational_matrix_is_improvable(self, q_inf, Q):
        inst = scalar_instance(q_inf, Q(Fraction(3, 7)), 49)
        witness = is_improvable_at(inst, 0.2)
        assert (witness.x, witness.y) == ((Q(7),), (Q(3),))
        assert witness.row_residuals == [0.0]

    def test_vector_instance(self, q_inf):
        inf = q_inf.arch_place
        t = central_ray_point(q_inf, 1, 2, {inf: 4})
        inst = vector_instance({inf: [math.sqrt(2), math.sqrt(3)]}, t, q_inf)
        solution = solve_dirichlet(inst)
        assert verify_solution(inst, solution)
        assert any(not c.is_zero for c in solution.x)

    def test_with_finite_place(self, q_inf_2, Q):
        inst = scalar_instance(q_inf_2, Q(Fraction(1, 3)), 4)
        solution = solve_dirichlet(inst)
        assert verify_solution(inst, solution)

    def test_gaussian_field(self, qi_inf, QI):
        inst = scalar_instance(qi_inf, QI(Fraction(1, 3), Fraction(1, 5)), 9)
        assert verify_solution(inst, solve_dirichlet(inst))

    def test_epsilon_range(self, q_inf):
        inst = scalar_instance(q_inf, math.sqrt(2), 5)
        for eps in (0.0, 1.5):
            with pytest.raises(InvalidInputError):
                is_improvable_at(inst, eps)

    def test_matrix_shape_is_checked(self, q_inf):
        t = central_ray_point(q_inf, 1, 1, {q_inf.arch_place: 5})
        with pytest.raises(InvalidInputError):
            DirichletInstance({q_inf.arch_place: [[1.0, 2.0]]}, t, q_inf)


@pytest.mark.slow
@settings(max_examples=500, deadline=None)
@given(dirichlet_instances())
def test_every_instance_has_a_verified_solution(inst):
    solution = solve_dirichlet(inst)
    assert verify_solution(inst, solution)
    assert any(not c.is_zero for c in solution.x)


@settings(max_examples=60, deadline=None)
@given(dirichlet_instances())
def test_improvability_is_monotone_in_epsilon(inst):
    verdicts = [is_improvable_at(inst, eps) is not None for eps in EPS_GRID]
    # once improvable, improvable at every larger epsilon
    assert verdicts == sorted(verdicts)
    assert verdicts[-1]


@settings(max_examples=40, deadline=None)
@given(dirichlet_instances())
def test_solver_is_deterministic(inst):
    first = solve_dirichlet(inst)
    second = solve_dirichlet(DirichletInstance(dict(inst.A), inst.t, inst.cfg))
    assert (first.x, first.y) == (second.x, second.y)
    assert first.row_residuals == second.row_residuals


class TestScans:
    def test_scan_respects_horizon(self, q_inf, Q):
        A = {q_inf.arch_place: [[Q(Fraction(1, 3))]]}
        schedule = central_ray_schedule(q_inf, 1, 1, 5)
        result = scan_di(A, q_inf, schedule, 0.5, workers=1)
        assert [r.improvable for r in result.rows] == [False, False, True, True, True]
        assert not result.aggregate
        past = scan_di(A, q_inf, schedule, 0.5, t0=5.0, workers=1)
        assert past.aggregate
        assert len(past.tested) == 3

    def test_scan_needs_unbounded_schedule(self, q_inf):
        A = {q_inf.arch_place: [[math.sqrt(2)]]}
        schedule = central_ray_schedule(q_inf, 1, 1, 3, ratio=1.0)
        with pytest.raises(InvalidInputError):
            scan_di(A, q_inf, schedule, 0.5)
        with pytest.raises(InvalidInputError):
            scan_di(A, q_inf, [], 0.5)

    def test_grid_scan(self, q_inf, Q):
        inf = q_inf.arch_place
        A = {inf: [[Q(Fraction(1, 3))]]}
        grid = ray_grid(q_inf, 1, 1, {inf: [2, 4, 8]})
        assert len(grid) == 3
        assert not scan_dimp0(A, q_inf, 0.5, 4, grid, workers=1).aggregate
        deep = scan_dimp0(A, q_inf, 0.5, 8, grid, workers=1)
        assert deep.aggregate and len(deep.rows) == 1
        with pytest.raises(InvalidInputError):
            scan_dimp0(A, q_inf, 0.5, 100, grid)

    def test_improvability_profile(self, q_inf, Q):
        A = {q_inf.arch_place: [[Q(Fraction(1, 3))]]}
        schedule = central_ray_schedule(q_inf, 1, 1, 3, start=8.0)
        profile = improvability_profile(A, q_inf, schedule, [0.5, 0.1], workers=1)
        assert profile["verdicts"] == {0.1: False, 0.5: True}
        assert profile["smallest"] == 0.5


def test_ordered_map_keeps_item_order():
    items = [-3, 1, -4, 1, -5, 9]
    assert ordered_map(abs, items, workers=2) == [3, 1, 4, 1, 5, 9]
    assert ordered_map(abs, items, workers=1) == [3, 1, 4, 1, 5, 9]
