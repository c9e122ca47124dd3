import logging
from pathlib import Path

from django.core.management.base import CommandError

from dgf.conf import get_setting
from dgf.forms import TrainToyForm
from dgf.layer import GuidedFilterParams
from dgf.management.base import EXIT_FAILED, FormCommand, command_errors
from dgf.storage import save_tensors, write_loss_csv
from dgf.tasks import make_dataset
from dgf.train import TrainConfig, build_model, train_dgf

logger = logging.getLogger(__name__)


class Command(FormCommand):
    help = 'Train a small DGF model on a synthetic image operator.'
    form_class = TrainToyForm

    def add_arguments(self, parser):
        parser.add_argument('--task', default='affine', help='affine, smooth or gamma.')
        parser.add_argument('--steps', default=get_setting('TOY_STEPS'), help='Adam steps.')
        parser.add_argument('--lr', default=get_setting('LEARNING_RATE'), help='Learning rate.')
        parser.add_argument('--seed', default=0, help='Seed of data, weights and sample order.')
        parser.add_argument('--checkpoint', required=True, help='Raw tensor file for the trained parameters.')
        parser.add_argument('--samples', default=get_setting('TOY_SAMPLES'), help='Training images.')
        parser.add_argument('--size', default=get_setting('TOY_SIZE'), help='Side of the square training images.')

    def handle(self, *args, **options):
        data = self.validated(options)
        checkpoint = Path(data['checkpoint'])
        with command_errors():
            dataset = make_dataset(data['task'], data['samples'], data['size'], seed=data['seed'])
            model = build_model(
                seed=data['seed'],
                guidance_channels=get_setting('GUIDANCE_CHANNELS'),
                gf_params=GuidedFilterParams(get_setting('RADIUS'), get_setting('EPS')),
                low_res_short_side=get_setting('LOW_RES_SHORT_SIDE'),
            )
            config = TrainConfig(learning_rate=data['lr'], steps=data['steps'], seed=data['seed'])
            result = train_dgf(model, dataset, config)
            save_tensors(checkpoint, model.state_dict())
            write_loss_csv(checkpoint.with_suffix('.csv'), result.losses)

        self.stdout.write(f'initial_loss {result.initial_loss!r}')
        self.stdout.write(f'final_loss {result.final_loss!r}')
        if not result.improved():
            raise CommandError(
                f'final loss {result.final_loss:.6g} is above 10% of the initial {result.initial_loss:.6g}',
                returncode=EXIT_FAILED,
            )
        logger.info('checkpoint written to %s', checkpoint)
