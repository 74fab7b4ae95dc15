import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from sadic_package.dirichlet import DirichletInstance, central_ray_point
from sadic_package.exceptions import InvalidInputError
from sadic_package.lattice_dynamics import (
    PrimitiveSubmodule,
    SLatticeBasis,
    check_correspondence,
    correspondence_threshold,
    covolume_lattice,
    covolume_submodule,
    delta_lattice,
    diag_flow,
    enumerate_primitive_submodules,
    flow_delta_batch,
    is_primitive,
    lattice_points_in_content_ball,
    plucker,
    wedge_action,
)
from sadic_package.number_field import NumberField, field_constant, places_over
from sadic_package.s_adic import PadicApprox, SBox, SConfig

PHI = (1 + math.sqrt(5)) / 2


def instance(cfg, a, delta):
    t = central_ray_point(cfg, 1, 1, {cfg.arch_place: delta})
    return DirichletInstance({v: [[a]] for v in cfg.S}, t, cfg)


def unit_box(cfg):
    return SBox(cfg, {v: 1.0 if v.is_archimedean else Fraction(1) for v in cfg.S})


def nonzero(coeffs):
    return {k: c for k, c in coeffs.items() if c != 0}


@pytest.mark.parametrize("S", [["inf"], ["inf", 2], ["inf", 3], ["inf", 2, 3]])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_trivial_lattice_has_delta_one(S, m):
    cfg = SConfig.from_json({"field": "Q", "S": S})
    result = delta_lattice(SLatticeBasis.identity(cfg, m), box=unit_box(cfg))
    assert result.value == 1.0


@pytest.mark.parametrize("d", [0, 1, 2, 3, 7, 11])
@pytest.mark.parametrize("m", [1, 2, 3])
def test_covolume_of_identity(d, m):
    K = NumberField(d)
    cfg = SConfig.from_primes(K)
    expected = math.sqrt(abs(K.discriminant)) ** m
    assert covolume_lattice(SLatticeBasis.identity(cfg, m)) == pytest.approx(expected, rel=1e-12)


def test_flow_preserves_covolume(q_inf):
    inst = instance(q_inf, math.sqrt(2), 16)
    assert covolume_lattice(SLatticeBasis.from_instance(inst)) == pytest.approx(1.0)


def test_threshold(q_inf, qi_inf):
    assert correspondence_threshold(q_inf, 2, 0.5) == pytest.approx(math.sqrt(2) * 0.5)
    assert correspondence_threshold(qi_inf, 2, 0.5) == pytest.approx(1.0)


class TestCorrespondence:
    def test_witness_gives_short_vector(self, q_inf):
        report = check_correspondence(instance(q_inf, PHI, 13), 1.0)
        assert report.verdict == "strict"
        assert report.content < report.threshold

    def test_rational_witness(self, q_inf, Q):
        report = check_correspondence(instance(q_inf, Q(Fraction(3, 7)), 49), 0.2)
        assert report.verdict == "strict"
        assert report.content == pytest.approx(7 / 49)

    def test_not_improvable(self, q_inf):
        report = check_correspondence(instance(q_inf, math.sqrt(2), 5), 0.5)
        assert report.verdict == "not_improvable"
        assert report.to_json()["content"] is None

    def test_structured_search_finds_the_witness(self, q_inf):
        inst = instance(q_inf, PHI, 13)
        result = delta_lattice(SLatticeBasis.from_instance(inst))
        assert result.witness is not None
        assert result.value < correspondence_threshold(q_inf, 2, 1.0)
        points = lattice_points_in_content_ball(SLatticeBasis.from_instance(inst), 1.0)
        assert points[0].content == pytest.approx(result.value)

    def test_raw_basis_needs_box(self, q_inf):
        with pytest.raises(InvalidInputError):
            delta_lattice(SLatticeBasis.identity(q_inf, 2))


@st.composite
def improvability_instances(draw):
    d = draw(st.sampled_from([0, 1]))
    K = NumberField(d)
    cfg = SConfig.from_primes(K, draw(st.sampled_from([(), (2,), (3,), (2, 3)] if d == 0 else [(), (2,), (5,)])))
    coords = st.fractions(min_value=-3, max_value=3, max_denominator=6)
    A = {v: [[K(draw(coords), draw(coords) if d else 0)]] for v in cfg.S}
    if d == 0 and draw(st.booleans()):
        A[cfg.arch_place] = [[draw(st.floats(min_value=-3, max_value=3, allow_nan=False))]]
    lower = field_constant(K) ** 2 * math.prod(v.residue_size for v in cfg.finite)
    t = central_ray_point(cfg, 1, 1, {cfg.arch_place: lower * draw(st.floats(min_value=1.5, max_value=8.0))})
    return DirichletInstance(A, t, cfg)


@settings(max_examples=150, deadline=None)
@given(improvability_instances(), st.sampled_from([0.1, 0.25, 0.5, 1.0]))
def test_correspondence_never_violated(inst, eps):
    report = check_correspondence(inst, eps)
    assert report.verdict in {"strict", "boundary", "not_improvable"}
    if report.witness is not None:
        assert report.content <= report.threshold * (1 + 1e-9)


def test_delta_of_diagonal_lattice(q_inf):
    inf = q_inf.arch_place
    L = SLatticeBasis(q_inf, {inf: [[2.0, 0.0], [0.0, 0.5]]})
    result = delta_lattice(L, box=SBox(q_inf, {inf: 4.0}))
    assert result.value == pytest.approx(0.5)
    assert [abs(c.a) for c in result.witness.z] == [0, 1]


@pytest.mark.parametrize("structure", ["generic", "diagonal"])
def test_covolume_of_diagonal_line(q_inf, Q, structure):
    line = PrimitiveSubmodule(q_inf, 2, ((Q(1), Q(1)),))
    h = SLatticeBasis(q_inf, {q_inf.arch_place: [[2.0, 0.0], [0.0, 0.5]]})
    assert covolume_submodule(line, h, structure) == pytest.approx(math.sqrt(4.25))


def test_diag_flow_checks_declared_entries(q_inf):
    t = central_ray_point(q_inf, 1, 1, {q_inf.arch_place: 4})
    with pytest.raises(InvalidInputError):
        diag_flow(t, {q_inf.arch_place: [0.5, 4.0]})
    g = diag_flow(t, {q_inf.arch_place: [-0.25, 4.0]})
    assert g.g[q_inf.arch_place][0][0] == -4.0


@st.composite
def wedge_inputs(draw):
    dim = draw(st.integers(2, 5))
    j = draw(st.integers(1, dim))
    fracs = st.fractions(min_value=-5, max_value=5, max_denominator=7)
    f = [draw(fracs) for _ in range(dim - 1)]
    g = [[Fraction(int(r == c)) for c in range(dim)] for r in range(dim)]
    g[0][1:] = f
    sets = list(itertools.combinations(range(dim), j))
    chosen = draw(st.lists(st.sampled_from(sets), min_size=1, max_size=len(sets), unique=True))
    w = {I: draw(fracs) for I in chosen}
    return g, w


@settings(max_examples=200, deadline=None)
@given(wedge_inputs())
def test_unipotent_wedge_matches_minor_expansion(data):
    g, w = data
    assert nonzero(wedge_action(g, w, "unipotent")) == nonzero(wedge_action(g, w, "generic"))


@settings(max_examples=100, deadline=None)
@given(wedge_inputs(), st.lists(st.floats(0.1, 10.0), min_size=5, max_size=5))
def test_diagonal_wedge_matches_minor_expansion(data, diagonal):
    unipotent, w = data
    dim = len(unipotent)
    g = [[diagonal[r] if r == c else 0.0 for c in range(dim)] for r in range(dim)]
    structured = wedge_action(g, w, "diagonal")
    generic = wedge_action(g, w, "generic")
    for I, value in structured.items():
        assert value == pytest.approx(float(generic[I]), rel=1e-9)


@st.composite
def wedge_pairs(draw):
    dim = draw(st.integers(2, 4))
    j = draw(st.integers(1, dim))
    fracs = st.fractions(min_value=-4, max_value=4, max_denominator=5)
    g = [[draw(fracs) for _ in range(dim)] for _ in range(dim)]
    h = [[draw(fracs) for _ in range(dim)] for _ in range(dim)]
    sets = list(itertools.combinations(range(dim), j))
    chosen = draw(st.lists(st.sampled_from(sets), min_size=1, max_size=len(sets), unique=True))
    return g, h, {I: draw(fracs) for I in chosen}


def matmul(g, h):
    size = len(h)
    return [[sum((g[r][k] * h[k][c] for k in range(size)), Fraction(0)) for c in range(size)] for r in range(len(g))]


@settings(max_examples=100, deadline=None)
@given(wedge_pairs())
def test_wedge_action_is_functorial(data):
    g, h, w = data
    assert nonzero(wedge_action(matmul(g, h), w)) == nonzero(wedge_action(g, wedge_action(h, w)))


@settings(max_examples=60, deadline=None)
@given(wedge_inputs())
def test_wedge_action_with_padic_entries(data):
    g, w = data
    two = places_over(NumberField(0), 2)[0]
    local = [[PadicApprox.from_rational(c, 2, place=two) for c in row] for row in g]
    exact = wedge_action(g, w, "generic")
    for structure in ("generic", "unipotent"):
        result = wedge_action(local, w, structure, two)
        assert set(nonzero(exact)) <= set(result)
        for I, value in result.items():
            expected = exact.get(I, Fraction(0))
            if isinstance(value, PadicApprox):
                assert (value - expected).zero
            else:
                assert value == expected


def test_unknown_wedge_structure():
    with pytest.raises(InvalidInputError):
        wedge_action([[1]], {(0,): 1}, "triangular")


class TestSubmodules:
    def test_primitive_depends_on_s(self, q_inf, q_inf_2, Q):
        w = plucker(((Q(2), Q(0)), (Q(0), Q(1))), 2)
        assert not is_primitive(w, q_inf)
        assert is_primitive(w, q_inf_2)

    def test_lines_of_height_one(self, q_inf):
        lines = enumerate_primitive_submodules(q_inf, 2, 1, 1)
        assert len(lines) == 4
        assert len(enumerate_primitive_submodules(q_inf, 2, 2, 1)) == 1
        with pytest.raises(InvalidInputError):
            enumerate_primitive_submodules(q_inf, 2, 3, 1)

    def test_covolume_of_full_module(self, qi_inf):
        full = PrimitiveSubmodule.full(qi_inf, 2)
        assert covolume_submodule(full, SLatticeBasis.identity(qi_inf, 2)) == pytest.approx(4.0)

    def test_covolume_along_flow_is_positive(self, q_inf):
        inst = instance(q_inf, math.sqrt(3), 8)
        h = SLatticeBasis.from_instance(inst)
        for delta in enumerate_primitive_submodules(q_inf, 2, 1, 2):
            assert covolume_submodule(delta, h) > 0


def test_batched_delta_matches_generic_search(q_inf):
    inf = q_inf.arch_place
    t = central_ray_point(q_inf, 1, 1, {inf: 8})
    values = [0.1, 0.37, math.sqrt(2) - 1, 0.5]
    batch = flow_delta_batch(q_inf, t, {inf: [[f] for f in values]})
    for f, fast in zip(values, batch):
        slow = delta_lattice(SLatticeBasis.from_instance(DirichletInstance({inf: [[f]]}, t, q_inf))).value
        if math.isinf(slow):
            assert math.isinf(fast)
        else:
            assert fast == pytest.approx(slow, rel=1e-9)
    assert batch[3] == pytest.approx(0.25)


def test_batched_delta_rejects_quadratic_fields(qi_inf):
    t = central_ray_point(qi_inf, 1, 1, {qi_inf.arch_place: 4})
    with pytest.raises(InvalidInputError):
        flow_delta_batch(qi_inf, t, {qi_inf.arch_place: [[0.5]]})
