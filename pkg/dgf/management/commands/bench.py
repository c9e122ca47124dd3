import csv

from dgf.bench import run_bench
from dgf.conf import get_setting
from dgf.forms import BenchForm
from dgf.management.base import FormCommand, command_errors


class Command(FormCommand):
    help = 'Time the guided filter forward and backward passes; CSV on stdout.'
    form_class = BenchForm

    def add_arguments(self, parser):
        parser.add_argument('--sizes', default='512,1024,2048', help='Comma-separated guide sizes.')
        parser.add_argument('--radii', default='1,8,32', help='Comma-separated window radii.')
        parser.add_argument('--repeat', default=get_setting('BENCH_REPEAT'), help='Timed runs per row.')

    def handle(self, *args, **options):
        data = self.validated(options)
        writer = csv.writer(self.stdout, lineterminator='\n')
        writer.writerow(['size', 'radius', 'ms_forward', 'ms_backward'])
        with command_errors():
            for size in data['sizes']:
                for row in run_bench([size], data['radii'], data['repeat']):
                    writer.writerow(row.as_csv())
