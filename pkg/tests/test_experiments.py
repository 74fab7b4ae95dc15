import csv
import json

import pytest
from rest_framework.exceptions import ValidationError

from sadic_package import __version__
from sadic_package.exceptions import InvalidInputError, SAdicError
from sadic_package.experiments import RunManifest, config_hash, replay, run, write_csv

SOLVE = {'experiment': 'dirichlet-solve', 'A': 'sqrt2', 'scales': {'inf': 5}}
SCAN = {'experiment': 'di-scan', 'A': '1/3', 'eps': 0.5, 'schedule': {'count': 3}, 'seed': 7}


def read_json(path):
    return json.loads(path.read_text(encoding='utf-8'))


class TestArtifacts:
    def test_write_csv(self, tmp_path):
        names = write_csv(
            tmp_path,
            'table',
            [('x', 'a float'), ('ok', 'a flag'), ('k', 'an integer')],
            [{'x': 0.1, 'ok': True, 'k': 3}, {'x': 1 / 3, 'ok': False, 'k': -1}],
        )
        assert names == ['table.csv', 'table.columns.json']
        with (tmp_path / 'table.csv').open(encoding='utf-8') as fh:
            rows = list(csv.reader(fh))
        assert rows == [['x', 'ok', 'k'], ['0.1', 'true', '3'], [repr(1 / 3), 'false', '-1']]
        contract = read_json(tmp_path / 'table.columns.json')
        assert contract['file'] == 'table.csv'
        assert [c['name'] for c in contract['columns']] == ['x', 'ok', 'k']

    def test_config_hash_ignores_key_order(self):
        assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})
        assert config_hash({'a': 1}) != config_hash({'a': 2})


class TestRun:
    def test_solve(self, tmp_path):
        manifest = run(SOLVE, tmp_path)
        assert manifest.experiment == 'dirichlet-solve'
        assert manifest.version == __version__
        assert manifest.run_id == f'{manifest.config_hash[:12]}-0'
        assert [a['name'] for a in manifest.artifacts] == ['solution.json']
        solution = read_json(tmp_path / 'solution.json')['solution']
        assert solution is not None
        recorded = RunManifest.load(tmp_path / 'manifest.json')
        assert recorded.config == SOLVE
        assert recorded.artifacts == manifest.artifacts

    def test_scan_writes_csv_and_contract(self, tmp_path):
        manifest = run(SCAN, tmp_path)
        names = [a['name'] for a in manifest.artifacts]
        assert names == ['di_scan.csv', 'di_scan.columns.json', 'di_scan_summary.json']
        with (tmp_path / 'di_scan.csv').open(encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh))
        assert [r['t_norm'] for r in rows] == ['2.0', '4.0', '8.0']
        assert [r['improvable'] for r in rows] == ['false', 'false', 'true']
        assert manifest.seed == 7
        contract = read_json(tmp_path / 'di_scan.columns.json')
        assert [c['name'] for c in contract['columns']] == [
            't_index',
            'place',
            't_components',
            't_norm',
            'included',
            'improvable',
            'witness_x',
            'witness_y',
            'residual_content',
        ]

    def test_scan_rows_carry_the_witness(self, tmp_path):
        run(SCAN, tmp_path)
        with (tmp_path / 'di_scan.csv').open(encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh))
        assert {r['place'] for r in rows} == {'inf'}
        eps_inf, delta_inf = (float(c) for c in rows[-1]['t_components'].split(';'))
        assert delta_inf == 8.0
        assert eps_inf * delta_inf == pytest.approx(1.0)
        # x = 3, y = 1 is the only solution with |x| <= 4 and |x/3 - y| <= 1/16
        assert json.loads(rows[-1]['witness_x']) == [['3']]
        assert json.loads(rows[-1]['witness_y']) == [['1']]
        assert float(rows[-1]['residual_content']) == 0.0
        assert rows[0]['witness_x'] == rows[0]['residual_content'] == ''

    def test_scan_emits_one_row_per_place(self, tmp_path):
        config = {**SCAN, 'S': ['inf', 2], 'A': {'inf': '1/3', '2': '1/3'}, 'schedule': {'count': 3, 'start': 4}}
        run(config, tmp_path)
        with (tmp_path / 'di_scan.csv').open(encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        assert [(r['t_index'], r['place']) for r in rows[:2]] == [('0', 'inf'), ('0', '2')]
        for first, second in zip(rows[::2], rows[1::2]):
            assert first['improvable'] == second['improvable']
            assert first['witness_x'] == second['witness_x']
        # finite places sit at epsilon = 1/2, delta = 1
        assert rows[1]['t_components'] == '1/2;1'

    def test_runs_are_reproducible(self, tmp_path):
        first = run(SCAN, tmp_path / 'a')
        second = run(SCAN, tmp_path / 'b')
        assert first.run_id == second.run_id
        assert (tmp_path / 'a' / 'di_scan.csv').read_bytes() == (tmp_path / 'b' / 'di_scan.csv').read_bytes()

    def test_overrides_change_the_run(self, tmp_path):
        manifest = run(SCAN, tmp_path, {'seed': 11, 'cap': None})
        assert manifest.seed == 11
        assert manifest.config['seed'] == 11
        assert 'cap' not in manifest.config

    def test_config_file(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text(json.dumps(SOLVE), encoding='utf-8')
        assert run(str(path), tmp_path / 'out').config_hash == config_hash(SOLVE)

    def test_unknown_experiment(self, tmp_path):
        with pytest.raises(ValidationError):
            run({'experiment': 'nothing'}, tmp_path)

    def test_missing_ray_point(self, tmp_path):
        with pytest.raises(InvalidInputError):
            run({'experiment': 'dirichlet-solve', 'A': 'sqrt2'}, tmp_path)

    def test_constants(self, tmp_path):
        config = {
            'experiment': 'nondiv-constants',
            'n': 1,
            'C': 1.0,
            'alpha': 1.0,
            'D': 1.0,
            'N_X': 1.0,
            'rho_v': [1.0],
        }
        run(config, tmp_path)
        constants = read_json(tmp_path / 'constants.json')
        assert float(constants['C_tilde']) == pytest.approx(2**1.5)
        assert float(constants['rho']) == 1.0

    def test_unreadable_config(self, tmp_path):
        with pytest.raises(InvalidInputError):
            run(str(tmp_path / 'missing.json'), tmp_path)
        broken = tmp_path / 'broken.json'
        broken.write_text('{', encoding='utf-8')
        with pytest.raises(InvalidInputError):
            run(str(broken), tmp_path)


class TestReplay:
    def test_replay_matches(self, tmp_path):
        recorded = run(SCAN, tmp_path / 'a')
        replayed = replay(tmp_path / 'a' / 'manifest.json', tmp_path / 'b')
        assert replayed.run_id == recorded.run_id

    def test_tampered_manifest(self, tmp_path):
        run(SCAN, tmp_path / 'a')
        path = tmp_path / 'a' / 'manifest.json'
        data = read_json(path)
        for artifact in data['artifacts']:
            if artifact['name'] == 'di_scan.csv':
                artifact['sha256'] = '0' * 64
        path.write_text(json.dumps(data), encoding='utf-8')
        with pytest.raises(SAdicError, match='di_scan.csv'):
            replay(path, tmp_path / 'b')

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InvalidInputError):
            replay(tmp_path / 'manifest.json', tmp_path / 'b')


class TestLatticeArtifacts:
    LATTICE = {'A': '1/3', 'scales': {'inf': 8}, 'eps': 0.5}

    def read_rows(self, path):
        with path.open(encoding='utf-8') as fh:
            return list(csv.DictReader(fh))

    def test_delta_csv(self, tmp_path):
        manifest = run({'experiment': 'lattice-delta', **self.LATTICE}, tmp_path)
        assert [a['name'] for a in manifest.artifacts] == ['delta.csv', 'delta.columns.json', 'delta.json']
        (row,) = self.read_rows(tmp_path / 'delta.csv')
        assert len(row['instance_id']) == 12
        assert float(row['threshold']) == pytest.approx(2**0.5 * 0.5)
        # (x, y) = (3, 1) maps to (0, 3/8)
        assert float(row['min_content']) <= 3 / 8 + 1e-9
        assert row['verdict'] == 'below_threshold'
        assert json.loads(row['box'])
        assert read_json(tmp_path / 'delta.columns.json')['file'] == 'delta.csv'

    def test_delta_without_epsilon_has_no_verdict(self, tmp_path):
        run({'experiment': 'lattice-delta', 'A': '1/3', 'scales': {'inf': 8}}, tmp_path)
        (row,) = self.read_rows(tmp_path / 'delta.csv')
        assert row['epsilon'] == row['threshold'] == row['verdict'] == ''
        assert row['min_content'] != ''

    def test_correspondence_csv(self, tmp_path):
        manifest = run({'experiment': 'lattice-correspond', **self.LATTICE}, tmp_path)
        names = [a['name'] for a in manifest.artifacts]
        assert names == ['correspondence.csv', 'correspondence.columns.json', 'correspondence.json']
        (row,) = self.read_rows(tmp_path / 'correspondence.csv')
        assert row['verdict'] == 'strict'
        assert row['epsilon'] == '0.5'
        assert float(row['min_content']) < float(row['threshold'])
        assert row['box'] == ''
        assert read_json(tmp_path / 'correspondence.json')['verdict'] == 'strict'

    def test_instance_id_follows_the_instance(self, tmp_path):
        run({'experiment': 'lattice-correspond', **self.LATTICE}, tmp_path / 'a')
        run({'experiment': 'lattice-delta', **self.LATTICE}, tmp_path / 'b')
        run({'experiment': 'lattice-delta', **self.LATTICE, 'scales': {'inf': 16}}, tmp_path / 'c')
        paths = [tmp_path / 'a' / 'correspondence.csv', tmp_path / 'b' / 'delta.csv', tmp_path / 'c' / 'delta.csv']
        ids = [self.read_rows(p)[0]['instance_id'] for p in paths]
        assert ids[0] == ids[1] != ids[2]


class TestTrajectory:
    def test_rational_matrix_reaches_small_content(self, tmp_path):
        config = {'experiment': 'delta-trajectory', 'A': '1/3', 'eps': 1.0, 'schedule': {'count': 4}}
        manifest = run(config, tmp_path)
        assert [a['name'] for a in manifest.artifacts] == ['trajectory.csv', 'trajectory.columns.json']
        with (tmp_path / 'trajectory.csv').open(encoding='utf-8') as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert float(rows[0]['threshold']) == pytest.approx(2**0.5)
        # (x, y) = (3, 1) gives content 3 / delta once delta = 16
        assert float(rows[-1]['delta_upper_bound']) <= 3 / 16 + 1e-9
        assert rows[-1]['below_threshold'] == 'true'

    def test_identity_flow_is_rejected(self, tmp_path):
        config = {'experiment': 'delta-trajectory', 'A': '1/3', 'eps': 1.0, 't': {'inf': [1, 1]}}
        with pytest.raises(ValidationError):
            run(config, tmp_path)


@pytest.mark.slow
def test_nondivergence_check_on_veronese_curve(tmp_path):
    config = {
        'experiment': 'nondiv-check',
        'map': {'veronese': 2},
        'ball': [{'place': 'inf', 'center': [0], 'radius': 1}],
        'rho_v': [0.1],
        'scales': {'inf': 4},
        'N': 20000,
        'family_size': 4,
    }
    run(config, tmp_path)
    report = read_json(tmp_path / 'nondiv_report.json')
    assert report['passed'] is True
    assert report['diagnosis'] == 'bounded'
    constants = read_json(tmp_path / 'constants.json')
    assert set(constants) >= {'rho_v', 'rho_tilde', 'rho', 'C_tilde', 'eps0'}


@pytest.mark.slow
def test_nondivergence_check_with_a_finite_place(tmp_path):
    config = {
        'experiment': 'nondiv-check',
        'S': ['inf', 2],
        'map': {'veronese': 2},
        'ball': [{'place': 'inf', 'center': [0], 'radius': 1}, {'place': '2', 'center': [0], 'radius': 1}],
        'rho_v': [0.1, 0.1],
        'scales': {'inf': 4},
        'N': 100000,
        'family_size': 4,
    }
    run(config, tmp_path)
    report = read_json(tmp_path / 'nondiv_report.json')
    assert report['passed'] is True
    assert all(row['pass'] for row in report['rows'])
    constants = read_json(tmp_path / 'constants.json')
    assert len(constants['rho_v']) == 2
    assert set(constants) >= {'rho_tilde', 'rho', 'C_tilde', 'eps0'}
