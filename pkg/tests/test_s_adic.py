import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from sadic_package.exceptions import EnumerationCapExceeded, InvalidInputError, PrecisionError
from sadic_package.number_field import KElem, abs_value, places_over
from sadic_package.s_adic import (
    PadicApprox,
    SAdelePoint,
    SBox,
    SConfig,
    enumerate_box,
    is_s_integer,
    local_leq,
    nearest_s_integer,
    s_integer_candidates,
    snap_to_value_group,
    value_group_exponent,
)


class TestSConfig:
    def test_from_json(self):
        cfg = SConfig.from_json({"field": "Q", "S": ["inf", 2, 3]})
        assert cfg.ell == 3
        assert cfg.primes == [2, 3]
        assert cfg.n_real == 1 and cfg.n_complex == 0 and cfg.n_finite == 2

    def test_archimedean_place_is_required(self, Q):
        with pytest.raises(InvalidInputError):
            SConfig(Q, tuple(places_over(Q, 2)))

    def test_duplicate_place(self, Q):
        inf = Q.archimedean_places()[0]
        with pytest.raises(InvalidInputError):
            SConfig(Q, (inf, inf))

    def test_split_prime_contributes_both_places(self, QI):
        cfg = SConfig.from_primes(QI, [5])
        assert cfg.n_finite == 2
        assert cfg.n_complex == 1


class TestPadicApprox:
    def test_from_rational(self):
        x = PadicApprox.from_rational(Fraction(1, 3), 2, prec=10)
        assert x.valuation == 0
        assert (x.residue(10) * 3) % 2**10 == 1

    def test_valuation_of_rational(self):
        x = PadicApprox.from_rational(Fraction(12, 5), 2, prec=16)
        assert x.valuation == 2
        assert x.absolute() == Fraction(1, 4)

    def test_cancellation_raises_precision_error(self):
        x = PadicApprox.from_rational(1, 5, prec=10)
        y = PadicApprox.from_rational(1 + 5**9, 5, prec=10)
        with pytest.raises(PrecisionError) as info:
            x - y
        assert info.value.exit_code == 3

    def test_exact_cancellation_is_a_zero(self):
        x = PadicApprox.from_rational(Fraction(2, 7), 3, prec=20)
        diff = x - Fraction(2, 7)
        assert diff.zero
        assert diff.absolute_precision == 20

    def test_arithmetic_matches_rationals(self):
        p = 7
        a, b = Fraction(3, 14), Fraction(-5, 2)
        x = PadicApprox.from_rational(a, p, prec=30)
        y = PadicApprox.from_rational(b, p, prec=30)
        assert x * y == PadicApprox.from_rational(a * b, p, prec=30)
        assert (x / y).valuation == -1

    def test_json_literal(self):
        x = PadicApprox.from_rational(Fraction(5, 3), 5, prec=12)
        assert PadicApprox.from_json(x.to_json()) == x

    def test_embedding_of_gaussian_integer(self, QI):
        v = next(w for w in places_over(QI, 5) if w.valuation(QI(2, 1)) == 1)
        x = PadicApprox.from_kelem(QI(2, 1), v, prec=20)
        assert x.valuation == 1

    def test_inert_place_is_rejected(self, QI):
        (three,) = places_over(QI, 3)
        with pytest.raises(InvalidInputError):
            PadicApprox.from_kelem(QI(1, 1), three)


class TestValueGroup:
    def test_exponent(self, q_inf_2):
        two = q_inf_2.finite[0]
        assert value_group_exponent(Fraction(1, 4), two) == -2
        with pytest.raises(InvalidInputError):
            value_group_exponent(3, two)

    def test_snap(self, q_inf_2):
        two = q_inf_2.finite[0]
        assert snap_to_value_group(3, two) == 2
        assert snap_to_value_group(Fraction(1, 3), two) == Fraction(1, 4)


class TestEnumeration:
    def test_integers_in_real_box(self, q_inf, Q):
        inf = q_inf.arch_place
        points = enumerate_box(q_inf, 1, SBox(q_inf, {inf: 2}))
        assert [p[0] for p in points] == [Q(k) for k in range(-2, 3)]

    def test_half_integers_with_prime_two(self, q_inf_2, Q):
        inf, two = q_inf_2.S
        points = enumerate_box(q_inf_2, 1, SBox(q_inf_2, {inf: 1, two: 2}))
        assert [p[0].a for p in points] == [Fraction(k, 2) for k in range(-2, 3)]

    def test_gaussian_units(self, qi_inf):
        inf = qi_inf.arch_place
        points = enumerate_box(qi_inf, 1, SBox(qi_inf, {inf: 1}))
        assert len(points) == 5

    def test_cap_refusal(self, q_inf):
        inf = q_inf.arch_place
        with pytest.raises(EnumerationCapExceeded) as info:
            enumerate_box(q_inf, 2, SBox(q_inf, {inf: 10**6}), cap=100)
        assert info.value.cap == 100
        assert info.value.exit_code == 3

    @settings(max_examples=30, deadline=None)
    @given(r=st.integers(1, 20), extra=st.integers(0, 10))
    def test_box_monotonicity(self, r, extra):
        cfg = SConfig.from_json({"field": "Q", "S": ["inf", 3]})
        inf, three = cfg.S
        small = enumerate_box(cfg, 1, SBox(cfg, {inf: r, three: 3}))
        large = enumerate_box(cfg, 1, SBox(cfg, {inf: r + extra, three: 3}))
        assert set(small) <= set(large)

    @settings(max_examples=50, deadline=None)
    @given(data=st.data())
    def test_box_matches_brute_force(self, data):
        d = data.draw(st.sampled_from([0, 1]), label="d")
        primes = data.draw(st.sampled_from([(), (2,), (3,), (2, 3)] if d == 0 else [(), (2,), (5,)]), label="primes")
        cfg = SConfig.from_json({"field": "Q" if d == 0 else "Q(i)", "S": ["inf", *primes]})
        n = data.draw(st.integers(1, 2 if d == 0 else 1), label="n")
        r = Fraction(data.draw(st.integers(1, 12), label="r"), 2)
        bounds = {cfg.arch_place: r}
        for v in cfg.finite:
            bounds[v] = Fraction(v.residue_size) ** data.draw(st.integers(-1, 2), label=f"k_{v}")
        points = enumerate_box(cfg, n, SBox(cfg, bounds))

        # every S-integer in the box has denominator dividing prod_p p^2
        D = 1
        for p in primes:
            D *= p**2
        size = math.isqrt(int(r * D * D)) + 1 if d else int(r * D) + 1
        if d == 0:
            grid = (KElem(cfg.K, Fraction(a, D)) for a in range(-size, size + 1))
        else:
            steps = range(-size, size + 1)
            grid = (KElem(cfg.K, Fraction(a, D), Fraction(b, D)) for a in steps for b in steps)
        coordinate = [
            x
            for x in grid
            if is_s_integer(x, cfg)
            and (abs(x.a) <= r if d == 0 else x.norm() <= r)
            and all(abs_value(x, v) <= bounds[v] for v in cfg.finite)
        ]
        assert set(points) == set(itertools.product(coordinate, repeat=n))
        assert len(points) == len(set(points))
        assert {tuple(-c for c in p) for p in points} == set(points)


class TestSIntegers:
    def test_is_s_integer(self, q_inf, q_inf_2, Q):
        assert is_s_integer(Q(Fraction(1, 2)), q_inf_2)
        assert not is_s_integer(Q(Fraction(1, 2)), q_inf)
        assert is_s_integer(Q(0), q_inf)

    def test_nearest_integer(self, q_inf, Q):
        inf = q_inf.arch_place
        assert nearest_s_integer({inf: 2.4}, {inf: 0.5}, q_inf) == Q(2)
        assert nearest_s_integer({inf: 2.5}, {inf: 0.1}, q_inf) is None

    def test_candidates_honour_finite_congruence(self, q_inf_2, Q):
        inf, two = q_inf_2.S
        # |y - 1|_2 <= 1/4 means y = 1 mod 4
        found = s_integer_candidates({inf: 0.0, two: Q(1)}, {inf: 6.0, two: Fraction(1, 4)}, q_inf_2)
        assert found[0] == Q(1)
        assert {y.a for y in found} == {Fraction(-3), Fraction(1), Fraction(5)}

    def test_local_leq(self, q_inf_2, Q):
        inf, two = q_inf_2.S
        assert local_leq(Q(4), Fraction(1, 4), two)
        assert not local_leq(Q(2), Fraction(1, 4), two)
        assert local_leq(1.0, 1.0, inf)


def test_adele_point_json(q_inf_2, Q):
    x = SAdelePoint.diagonal(q_inf_2, Q(Fraction(3, 2)))
    assert x.to_json() == {"inf": repr(1.5), "2": ["3/2"]}
    with pytest.raises(InvalidInputError):
        SAdelePoint(q_inf_2, {q_inf_2.arch_place: 1.0})
