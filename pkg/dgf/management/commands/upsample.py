import logging

import numpy as np

from dgf.conf import get_setting
from dgf.errors import StorageError
from dgf.filters import bilinear_resize
from dgf.forms import UpsampleForm
from dgf.layer import GuidedFilterParams, Variant, gf_forward_highres, gf_forward_joint
from dgf.management.base import FormCommand, command_errors
from dgf.storage import is_raw_tensor_file, load_image, load_tensors, save_image
from dgf.tensor import Tensor

logger = logging.getLogger(__name__)


class Command(FormCommand):
    help = 'Upsample a low-resolution output under the guidance of a high-resolution image.'
    form_class = UpsampleForm

    def add_arguments(self, parser):
        parser.add_argument('--guide', required=True, help='High-resolution guide image (PPM/PGM/PNG).')
        parser.add_argument(
            '--low-res-output',
            required=True,
            help='Low-resolution output: an image or a raw tensor file (first tensor is used).',
        )
        parser.add_argument('--radius', default=get_setting('RADIUS'), help='Window radius.')
        parser.add_argument('--eps', default=get_setting('EPS'), help='Regularizer.')
        parser.add_argument('--variant', default=Variant.JOINT.value, help='joint or highres.')
        parser.add_argument('--out', required=True, help='Output image path.')

    def handle(self, *args, **options):
        data = self.validated(options)
        with command_errors():
            params = GuidedFilterParams(data['radius'], data['eps'])
            guide = load_image(data['guide'])
            low = load_low_res(data['low_res_output'])
            guide = match_channels(guide, low.channels)
            logger.info('upsampling %s to %s (%s, %s)', low.shape, guide.shape, data['variant'], params)
            if data['variant'] == Variant.JOINT.value:
                guide_low = bilinear_resize(guide, low.height, low.width)
                output, _ = gf_forward_joint(guide_low, guide, low, params)
            else:
                output_up = bilinear_resize(low, guide.height, guide.width)
                output, _ = gf_forward_highres(guide, output_up, params)
            save_image(data['out'], output)


def load_low_res(path) -> Tensor:
    if not is_raw_tensor_file(path):
        return load_image(path)
    tensors = load_tensors(path)
    if not tensors:
        raise StorageError(f'{path} holds no tensors')
    return next(iter(tensors.values()))


def match_channels(guide: Tensor, channels: int) -> Tensor:
    """A grayscale guide serves every output channel; other counts must match."""
    if guide.channels == 1 and channels > 1:
        return Tensor.adopt(np.repeat(guide.array, channels, axis=2))
    return guide
