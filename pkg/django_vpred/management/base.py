import logging

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import VPredError
from ..experiments import RUNNERS
from ..forms import build_config, parse_overrides

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def _describe(error):
    if hasattr(error, 'error_dict'):
        return '; '.join(
            '%s: %s' % (name, ' '.join(messages)) for name, messages in sorted(error.message_dict.items())
        )
    return ' '.join(error.messages)


class ExperimentCommand(BaseCommand):
    """
    Shared surface of the experiment commands: ``--config``, ``--seed``,
    ``--out`` and repeatable ``--set key=value``.
    """
    experiment = None

    def add_arguments(self, parser):
        parser.add_argument('--config', metavar='PATH', help='Flat JSON file of settings.')
        parser.add_argument('--seed', type=int, help='Root seed for every random stream.')
        parser.add_argument('--out', metavar='DIR', help='Output directory.')
        parser.add_argument(
            '--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
            help='Override one setting; may be repeated.',
        )

    def handle(self, *args, **options):
        logging.getLogger('django_vpred').setLevel(VERBOSITY_LEVELS.get(options['verbosity'], logging.DEBUG))
        try:
            config = build_config(
                self.experiment,
                path=options['config'],
                overrides=parse_overrides(options['overrides']),
                seed=options['seed'],
                out_dir=options['out'],
            )
        except ValidationError as e:
            raise CommandError('Invalid configuration: %s' % _describe(e))

        try:
            paths = RUNNERS[self.experiment](config)
        except ValidationError as e:
            # Settings checked against the data, such as a checkpoint's dataset
            raise CommandError('Invalid configuration: %s' % _describe(e)) from e
        except (VPredError, ValueError) as e:
            raise CommandError('%s failed: %s' % (self.experiment, e)) from e

        for name, path in paths.items():
            self.stdout.write('%s: %s' % (name, path))
        self.stdout.write(self.style.SUCCESS('config_hash=%s' % config.config_hash))
