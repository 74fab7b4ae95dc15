"""
Django REST Framework serializers for experiment configurations.

Every experiment is a single JSON document. Field-element literals are
exact: integers or "p/q" strings are rationals, [a, b] is a + b*w in the
integral basis, a small whitelist of names stands for archimedean
constants, and {"p", "val", "unit", "prec"} is a p-adic number.
"""

import math
from fractions import Fraction

from rest_framework import serializers

from .exceptions import InvalidInputError
from .dirichlet import RayPoint, central_ray_point, central_ray_schedule, ray_grid
from .good_measures import LocalBall, MapSpec, MeasureSpec
from .number_field import KElem, NumberField, Place, PlaceKind
from .s_adic import PadicApprox, SConfig

EXPERIMENTS = [
    ('dirichlet-solve', 'Dirichlet solve'),
    ('dirichlet-improvable', 'Dirichlet eps-improvability'),
    ('di-scan', 'Improvability scan along a ray schedule'),
    ('di-scan-grid', 'Improvability over a ray grid'),
    ('lattice-delta', 'Shortest content of a flow lattice'),
    ('lattice-correspond', 'Improvability to lattice correspondence'),
    ('delta-trajectory', 'Shortest content along a ray schedule'),
    ('good-certify', '(C, alpha)-good certification'),
    ('good-rho', 'rho_v estimation'),
    ('nondiv-check', 'Quantitative nondivergence check'),
    ('nondiv-constants', 'Explicit nondivergence constants'),
    ('nondiv-discan', 'Measure of non-improvable flow points'),
]

_SQRT5 = math.sqrt(5)
ARCHIMEDEAN_CONSTANTS = {
    'sqrt2': math.sqrt(2),
    'sqrt3': math.sqrt(3),
    'sqrt5': _SQRT5,
    'phi': (1 + _SQRT5) / 2,
    'pi': math.pi,
    'e': math.e,
}


def parse_rational(value) -> Fraction:
    if isinstance(value, bool) or isinstance(value, float):
        raise serializers.ValidationError(f"{value!r} is not an exact rational; use an integer or a 'p/q' string")
    try:
        return Fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise serializers.ValidationError(f"{value!r} is not a rational literal")


def parse_element(value, K: NumberField, v: Place = None):
    """A field-element literal, read at place ``v`` when one is given."""
    if isinstance(value, str) and value in ARCHIMEDEAN_CONSTANTS:
        if v is None or not v.is_archimedean:
            raise serializers.ValidationError(f"'{value}' is only meaningful at an archimedean place")
        number = ARCHIMEDEAN_CONSTANTS[value]
        return complex(number) if v.kind == PlaceKind.COMPLEX else number
    if isinstance(value, dict):
        if v is None or v.is_archimedean:
            raise serializers.ValidationError("p-adic literals belong to finite places")
        if int(value.get('p', 0)) != v.p:
            raise serializers.ValidationError(f"p-adic literal over {value.get('p')} used at place {v.label}")
        try:
            return PadicApprox.from_json(value, place=v)
        except (KeyError, ValueError) as e:
            raise serializers.ValidationError(f"malformed p-adic literal {value!r}: {e}")
    if isinstance(value, (list, tuple)):
        if len(value) != 2 or K.d == 0 and parse_rational(value[1]) != 0:
            raise serializers.ValidationError(f"{value!r} is not an element [a, b] of {K.label}")
        return KElem(K, parse_rational(value[0]), parse_rational(value[1]))
    return KElem(K, parse_rational(value))


def place_by_label(cfg: SConfig, label) -> Place:
    label = str(label)
    for v in cfg.S:
        if v.label == label:
            return v
    raise serializers.ValidationError(f"no place labelled '{label}' in S = {[v.label for v in cfg.S]}")


def _per_place(cfg: SConfig, data, what: str, partial: bool = False) -> dict:
    """Resolve a mapping keyed by place label; a non-mapping value is shared by every place."""
    if not isinstance(data, dict) or 'p' in data:
        return {v: data for v in cfg.S}
    resolved = {place_by_label(cfg, label): value for label, value in data.items()}
    missing = [v.label for v in cfg.S if v not in resolved]
    if missing and not partial:
        raise serializers.ValidationError(f"{what} has no entry for places {missing}")
    return resolved


def parse_matrix(cfg: SConfig, data, m: int, n: int) -> dict:
    """A = (A_v)_v; a scalar stands for a 1x1 matrix and a flat list for one row."""
    out = {}
    for v, value in _per_place(cfg, data, 'A').items():
        if not isinstance(value, list):
            rows = [[value]]
        elif value and not isinstance(value[0], list):
            rows = [value]
        else:
            rows = value
        if len(rows) != m or any(len(r) != n for r in rows):
            raise serializers.ValidationError(f"A at {v.label} must be {m} x {n}")
        out[v] = [[parse_element(a, cfg.K, v) for a in row] for row in rows]
    return out


def _real_number(value) -> float:
    if isinstance(value, str):
        if value in ARCHIMEDEAN_CONSTANTS:
            return ARCHIMEDEAN_CONSTANTS[value]
        return float(parse_rational(value))
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise serializers.ValidationError(f"{value!r} is not a real number")
    return float(value)


def _arch_coordinate(value, v: Place):
    """A real coordinate, or [re, im] at a complex place."""
    if v.kind == PlaceKind.COMPLEX:
        if isinstance(value, (list, tuple)) and len(value) == 2:
            return complex(_real_number(value[0]), _real_number(value[1]))
        return complex(_real_number(value))
    return _real_number(value)


def parse_scale(v: Place, value):
    return _real_number(value) if v.is_archimedean else parse_rational(value)


def parse_ray(cfg: SConfig, m: int, n: int, data) -> RayPoint:
    comps = {v: tuple(parse_scale(v, c) for c in values) for v, values in _per_place(cfg, data, 't').items()}
    return RayPoint(cfg, m, n, comps)


class ScheduleSerializer(serializers.Serializer):
    """Central-ray schedule with geometric archimedean scales."""

    count = serializers.IntegerField(min_value=1)
    start = serializers.FloatField(default=2.0, min_value=1.0)
    ratio = serializers.FloatField(default=2.0, min_value=1.0)
    finite_step = serializers.IntegerField(default=1, min_value=0)


class BallSerializer(serializers.Serializer):
    place = serializers.CharField()
    dim = serializers.IntegerField(min_value=1, default=1)
    center = serializers.ListField(child=serializers.JSONField())
    radius = serializers.JSONField()


class ExperimentSerializer(serializers.Serializer):
    """Fields every experiment shares; ``validate`` resolves the field and S."""

    experiment = serializers.ChoiceField(choices=EXPERIMENTS)
    field = serializers.CharField(default='Q')
    S = serializers.ListField(child=serializers.JSONField(), default=['inf'])
    seed = serializers.IntegerField(default=0, min_value=0)
    cap = serializers.IntegerField(required=False, min_value=1)
    workers = serializers.IntegerField(required=False, min_value=1)

    def validate(self, attrs):
        try:
            attrs['cfg'] = SConfig.from_json({'field': attrs['field'], 'S': attrs['S']})
        except InvalidInputError as e:
            raise serializers.ValidationError({'S': str(e)})
        return attrs


class DirichletSerializer(ExperimentSerializer):
    m = serializers.IntegerField(min_value=1, default=1)
    n = serializers.IntegerField(min_value=1, default=1)
    A = serializers.JSONField()
    t = serializers.JSONField(required=False)
    scales = serializers.JSONField(required=False)
    eps = serializers.FloatField(required=False, min_value=0.0, max_value=1.0)
    eps_grid = serializers.ListField(child=serializers.FloatField(min_value=0.0, max_value=1.0), required=False)
    schedule = ScheduleSerializer(required=False)
    grid = serializers.JSONField(required=False)
    M = serializers.FloatField(required=False, min_value=1.0)
    t0 = serializers.FloatField(default=0.0, min_value=0.0)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        cfg, m, n = attrs['cfg'], attrs['m'], attrs['n']
        attrs['A'] = parse_matrix(cfg, attrs['A'], m, n)
        try:
            if 't' in attrs:
                attrs['t'] = parse_ray(cfg, m, n, attrs['t'])
            elif 'scales' in attrs:
                given = _per_place(cfg, attrs['scales'], 'scales', partial=True)
                scales = {v: parse_scale(v, s) for v, s in given.items()}
                attrs['t'] = central_ray_point(cfg, m, n, scales)
            if 'schedule' in attrs:
                attrs['schedule'] = central_ray_schedule(cfg, m, n, **attrs['schedule'])
            if 'grid' in attrs:
                given = _per_place(cfg, attrs['grid'], 'grid', partial=True)
                lists = {v: [parse_scale(v, s) for s in values] for v, values in given.items()}
                attrs['grid'] = ray_grid(cfg, m, n, lists)
        except InvalidInputError as e:
            raise serializers.ValidationError(str(e))
        return attrs


class MeasureSerializer(ExperimentSerializer):
    """A map f = (f^{(v)})_v and product balls in X = prod_v K_v^{l_v}."""

    map = serializers.JSONField()
    ball = serializers.ListField(child=BallSerializer(), required=False)
    balls = serializers.ListField(child=serializers.ListField(child=BallSerializer()), required=False)
    N = serializers.IntegerField(default=10_000, min_value=1)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        cfg = attrs['cfg']
        if 'ball' not in attrs and 'balls' not in attrs:
            raise serializers.ValidationError("either 'ball' or 'balls' is required")
        try:
            if 'ball' in attrs:
                attrs['ball'] = self._measure(cfg, attrs['ball'])
            attrs['balls'] = [self._measure(cfg, spec) for spec in attrs.get('balls', [])] or [attrs['ball']]
            attrs.setdefault('ball', attrs['balls'][0])
            attrs['map'] = self._map(cfg, attrs['map'])
        except InvalidInputError as e:
            raise serializers.ValidationError(str(e))
        return attrs

    @staticmethod
    def _measure(cfg: SConfig, balls) -> MeasureSpec:
        out = []
        for b in balls:
            v = place_by_label(cfg, b['place'])
            if v.is_archimedean:
                center = [_arch_coordinate(c, v) for c in b['center']]
                radius = _real_number(b['radius'])
            else:
                center = [parse_rational(c) for c in b['center']]
                radius = parse_rational(b['radius'])
            out.append(LocalBall(v, b['dim'], tuple(center), radius))
        return MeasureSpec(tuple(out))

    @staticmethod
    def _map(cfg: SConfig, data) -> MapSpec:
        if not isinstance(data, dict):
            raise serializers.ValidationError("map must be an object")
        if 'veronese' in data:
            return MapSpec.veronese(cfg.S, int(data['veronese']))
        components = data.get('components')
        if components is None:
            raise serializers.ValidationError("map needs 'veronese' or 'components'")
        variables = data.get('variables', ['x'])
        if isinstance(components, dict):
            exprs = _per_place(cfg, components, 'map components')
        else:
            exprs = {v: components for v in cfg.S}
        if isinstance(variables, dict):
            names = _per_place(cfg, variables, 'map variables')
        else:
            names = {v: variables for v in cfg.S}
        try:
            return MapSpec.parse(exprs, names)
        except (SyntaxError, TypeError, ValueError) as e:
            raise serializers.ValidationError(f"cannot parse map components: {e}")


class GoodSerializer(MeasureSerializer):
    C = serializers.FloatField(default=1.0, min_value=0.0)
    alpha = serializers.FloatField(default=1.0, min_value=0.0)
    eps_grid = serializers.ListField(child=serializers.FloatField(min_value=0.0), default=[0.01, 0.05, 0.1, 0.25, 0.5])
    family_size = serializers.IntegerField(default=8, min_value=1)
    net_size = serializers.IntegerField(default=256, min_value=1)
    conservative = serializers.BooleanField(default=False)


class NondivSerializer(GoodSerializer):
    """Inputs of the nondivergence checks; unset constants are computed from the measure and the map."""

    D = serializers.FloatField(required=False, min_value=1.0)
    N_X = serializers.FloatField(required=False, min_value=1.0)
    rho_v = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False)
    eps = serializers.FloatField(required=False, min_value=0.0, max_value=1.0)
    t = serializers.JSONField(required=False)
    scales = serializers.JSONField(required=False)
    schedule = ScheduleSerializer(required=False)
    t0 = serializers.FloatField(default=0.0, min_value=0.0)
    height = serializers.FloatField(default=1.0, min_value=0.0)
    eps_grid = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False)

    def validate(self, attrs):
        attrs = super().validate(attrs)
        cfg, n = attrs['cfg'], attrs['map'].n
        try:
            if 't' in attrs:
                attrs['t'] = parse_ray(cfg, 1, n, attrs['t'])
            elif 'scales' in attrs:
                given = _per_place(cfg, attrs['scales'], 'scales', partial=True)
                scales = {v: parse_scale(v, s) for v, s in given.items()}
                attrs['t'] = central_ray_point(cfg, 1, n, scales)
            if 'schedule' in attrs:
                attrs['schedule'] = central_ray_schedule(cfg, 1, n, **attrs['schedule'])
        except InvalidInputError as e:
            raise serializers.ValidationError(str(e))
        if 'rho_v' in attrs and len(attrs['rho_v']) != len(cfg.S):
            raise serializers.ValidationError("rho_v needs one value per place of S")
        return attrs


class ConstantsSerializer(ExperimentSerializer):
    n = serializers.IntegerField(min_value=1)
    C = serializers.FloatField(min_value=0.0)
    alpha = serializers.FloatField(min_value=0.0)
    D = serializers.FloatField(min_value=1.0)
    N_X = serializers.FloatField(min_value=1.0)
    rho_v = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=1)
    j = serializers.IntegerField(default=1, min_value=1)


SERIALIZERS = {
    'dirichlet-solve': DirichletSerializer,
    'dirichlet-improvable': DirichletSerializer,
    'di-scan': DirichletSerializer,
    'di-scan-grid': DirichletSerializer,
    'lattice-delta': DirichletSerializer,
    'lattice-correspond': DirichletSerializer,
    'delta-trajectory': DirichletSerializer,
    'good-certify': GoodSerializer,
    'good-rho': GoodSerializer,
    'nondiv-check': NondivSerializer,
    'nondiv-constants': ConstantsSerializer,
    'nondiv-discan': NondivSerializer,
}


def validate_config(data: dict) -> dict:
    """Pick the serializer named by ``experiment`` and return its validated data."""
    if not isinstance(data, dict):
        raise serializers.ValidationError("a configuration is a JSON object")
    name = data.get('experiment')
    if name not in SERIALIZERS:
        raise serializers.ValidationError({'experiment': f"unknown experiment '{name}'"})
    serializer = SERIALIZERS[name](data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.validated_data
