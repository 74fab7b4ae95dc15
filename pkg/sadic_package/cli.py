"""
Console entry point: ``sadic <verb> ...`` without a Django project.
"""

import sys

import django
from django.conf import settings

STANDALONE_SETTINGS = {
    'INSTALLED_APPS': ['rest_framework', 'sadic_package'],
    'USE_TZ': True,
}


def configure():
    if not settings.configured:
        settings.configure(**STANDALONE_SETTINGS)
    django.setup()


def main(argv=None):
    configure()
    from sadic_package.management.commands.sadic import Command

    argv = sys.argv[1:] if argv is None else list(argv)
    # run_from_argv turns CommandError into sys.exit(returncode)
    Command().run_from_argv(['sadic', 'sadic', *argv])
    return 0


if __name__ == '__main__':
    sys.exit(main())
