"""
Django management command running S-adic experiments from JSON configs.

    sadic dirichlet solve --config cfg.json --out runs/a
    sadic nondiv check --config cfg.json --out runs/b --seed 3 --workers 4
    sadic run --config cfg.json --out runs/c
    sadic replay --manifest runs/c/manifest.json --out runs/c2
"""

import logging

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

from sadic_package.exceptions import SAdicError
from sadic_package.experiments import load_config, replay, run

logger = logging.getLogger(__name__)

# (group, action) -> experiments the verb accepts; the first is used when the config names another one
VERBS = {
    'dirichlet': {
        'solve': ('dirichlet-solve',),
        'improvable': ('dirichlet-improvable',),
        'scan': ('di-scan', 'di-scan-grid'),
    },
    'lattice': {
        'delta': ('lattice-delta',),
        'correspond': ('lattice-correspond',),
        'trajectory': ('delta-trajectory',),
    },
    'good': {
        'certify': ('good-certify',),
        'rho': ('good-rho',),
    },
    'nondiv': {
        'check': ('nondiv-check',),
        'constants': ('nondiv-constants',),
        'discan': ('nondiv-discan',),
    },
}

LOG_LEVELS = {0: logging.ERROR, 1: logging.INFO}


def _add_run_arguments(parser):
    parser.add_argument('--config', type=str, required=True, help='Path to the JSON experiment configuration')
    parser.add_argument('--out', type=str, required=True, help='Output directory for artifacts and manifest.json')
    parser.add_argument('--seed', type=int, help='Override the configured RNG seed')
    parser.add_argument('--cap', type=int, help='Override the enumeration cap')
    parser.add_argument('--workers', type=int, help='Worker-pool size for scans')


def experiment_for(group, action, configured=None):
    accepted = VERBS[group][action]
    return configured if configured in accepted else accepted[0]


class Command(BaseCommand):
    help = 'Run S-adic Diophantine approximation experiments'
    requires_system_checks = []

    def add_arguments(self, parser):
        verbs = parser.add_subparsers(dest='verb', required=True)
        for group, actions in VERBS.items():
            sub = verbs.add_parser(group, help=f'{group} experiments')
            sub.add_argument('action', choices=sorted(actions))
            _add_run_arguments(sub)
        _add_run_arguments(verbs.add_parser('run', help='Run the experiment named in the config'))
        sub = verbs.add_parser('replay', help='Re-run a manifest and compare CSV digests')
        sub.add_argument('--manifest', type=str, required=True, help='Path to a manifest.json')
        sub.add_argument('--out', type=str, required=True, help='Output directory for the replayed run')

    def handle(self, *args, **options):
        logging.basicConfig(
            level=LOG_LEVELS.get(options['verbosity'], logging.DEBUG),
            format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        )
        verb = options['verb']
        try:
            if verb == 'replay':
                manifest = replay(options['manifest'], options['out'])
                self.stdout.write(self.style.SUCCESS(f'Replay {manifest.run_id} reproduced every CSV artifact'))
                return
            config = options['config']
            overrides = {k: options[k] for k in ('seed', 'cap', 'workers')}
            if verb != 'run':
                config = load_config(config)
                config['experiment'] = experiment_for(verb, options['action'], config.get('experiment'))
            manifest = run(config, options['out'], overrides)
        except ValidationError as e:
            logger.error(f'Invalid configuration: {e.detail}')
            raise CommandError(f'Invalid configuration: {e.detail}', returncode=2)
        except SAdicError as e:
            raise CommandError(f'{type(e).__name__}: {e}', returncode=e.exit_code)
        except Exception as e:
            logger.error(f'❌ Unexpected {type(e).__name__} in {verb}: {e}')
            raise CommandError(f'Internal error: {type(e).__name__}: {e}', returncode=4)

        self.stdout.write(
            self.style.SUCCESS(
                f'Finished {manifest.experiment} run {manifest.run_id}: '
                f'{len(manifest.artifacts)} artifacts in {options["out"]}'
            )
        )
