"""Wall-clock timing of the joint guided filter forward and backward passes."""

import dataclasses
import logging
import time

import numpy as np

from dgf.errors import InvalidArgument
from dgf.filters import mean_filter
from dgf.layer import GuidedFilterParams, gf_backward, gf_forward_joint
from dgf.tensor import Tensor

logger = logging.getLogger(__name__)

CHANNELS = 3
# Low-resolution inputs are this many times smaller per side than the guide.
LOW_RES_FACTOR = 4


@dataclasses.dataclass(frozen=True)
class BenchRow:
    size: int
    radius: int
    ms_forward: float
    ms_backward: float

    def as_csv(self) -> list:
        return [self.size, self.radius, f'{self.ms_forward:.3f}', f'{self.ms_backward:.3f}']


def bench_case(size: int, radius: int, repeat: int, seed: int = 0) -> BenchRow:
    """Median forward and backward time of one size×size×3 joint upsampling."""
    if size < 1 or radius < 0 or repeat < 1:
        raise InvalidArgument(f'bad bench case: size={size} radius={radius} repeat={repeat}')
    rng = np.random.default_rng(seed)
    low = max(1, size // LOW_RES_FACTOR)
    g_low = Tensor.adopt(rng.uniform(size=(low, low, CHANNELS)))
    o_low = Tensor.adopt(rng.uniform(size=(low, low, CHANNELS)))
    g_high = Tensor.adopt(rng.uniform(size=(size, size, CHANNELS)))
    d_out = Tensor.adopt(rng.uniform(-1.0, 1.0, size=(size, size, CHANNELS)))
    params = GuidedFilterParams(radius=radius, eps=1e-2)

    forward_ms, backward_ms = [], []
    for _ in range(repeat):
        start = time.perf_counter()
        _, tape = gf_forward_joint(g_low, g_high, o_low, params)
        middle = time.perf_counter()
        gf_backward(tape, d_out)
        end = time.perf_counter()
        forward_ms.append((middle - start) * 1e3)
        backward_ms.append((end - middle) * 1e3)
    row = BenchRow(size, radius, float(np.median(forward_ms)), float(np.median(backward_ms)))
    logger.info('size %d radius %d: forward %.3f ms, backward %.3f ms', size, radius, row.ms_forward, row.ms_backward)
    return row


def run_bench(sizes, radii, repeat: int, seed: int = 0) -> list[BenchRow]:
    """One row per (size, radius), sizes outermost."""
    return [bench_case(size, radius, repeat, seed) for size in sizes for radius in radii]


def time_box_filter(size: int, radius: int, repeat: int, channels: int = 1) -> float:
    """Median milliseconds of one mean_filter call on a random size×size image."""
    image = Tensor.adopt(np.random.default_rng(0).uniform(size=(size, size, channels)))
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        mean_filter(image, radius)
        times.append((time.perf_counter() - start) * 1e3)
    return float(np.median(times))
