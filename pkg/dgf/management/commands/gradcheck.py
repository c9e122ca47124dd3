import argparse

from django.core.management.base import CommandError

from dgf.conf import get_setting
from dgf.forms import GradcheckForm
from dgf.management.base import EXIT_FAILED, FormCommand, command_errors
from dgf.verify import run_suite


class Command(FormCommand):
    help = 'Check every hand-written backward pass against finite differences.'
    form_class = GradcheckForm

    def add_arguments(self, parser):
        parser.add_argument('--seed', default=0, help='Seed of the random instances.')
        parser.add_argument('--tol', default=get_setting('GRADCHECK_TOLERANCE'), help='Relative error tolerance.')
        # Test hook: negate one term of the guided layer backward.
        parser.add_argument('--corrupt', default=None, help=argparse.SUPPRESS)

    def handle(self, *args, **options):
        data = self.validated(options)
        with command_errors():
            report = run_suite(seed=data['seed'], tolerance=data['tol'], flip=data['corrupt'])
        for line in report.lines():
            self.stdout.write(line)
        if not report.passed:
            raise CommandError(
                f'{len(report.failures)} of {len(report.entries)} gradient checks failed, '
                f'worst: {report.worst.line}',
                returncode=EXIT_FAILED,
            )
