"""Synthetic images and image operators for desk-scale training.

Each operator maps a high-resolution image in [0, 1] to its target, giving
exact, license-free ground truth.
"""

import numpy as np

from dgf.errors import InvalidArgument
from dgf.filters import bilinear_resize, mean_filter
from dgf.tensor import Tensor

SMOOTH_RADIUS = 2
GAMMAS = (0.5, 1.0, 2.0)


def random_image(rng: np.random.Generator, height: int, width: int, channels: int = 3) -> Tensor:
    """Smooth random image with fine texture, values within [0.15, 0.85].

    A coarse grid of uniform noise is upsampled bilinearly for the large
    structures; small per-pixel noise adds the detail a guide has to carry.
    """
    coarse = rng.uniform(-1.0, 1.0, size=(max(2, height // 8), max(2, width // 8), channels))
    smooth = bilinear_resize(Tensor.adopt(coarse), height, width).array
    detail = rng.uniform(-1.0, 1.0, size=(height, width, channels))
    return Tensor.adopt(0.5 + 0.3 * smooth + 0.05 * detail)


def affine(image: Tensor) -> Tensor:
    return image.map(lambda a: np.clip(1.5 * a - 0.25, 0.0, 1.0))


def smooth(image: Tensor) -> Tensor:
    return mean_filter(image, SMOOTH_RADIUS)


def gamma(image: Tensor) -> Tensor:
    """Per-channel power curve, cycling through GAMMAS."""
    exponents = np.resize(np.asarray(GAMMAS), image.channels)
    return image.map(lambda a: np.power(np.clip(a, 0.0, 1.0), exponents))


def identity(image: Tensor) -> Tensor:
    return image


TASKS = {
    'affine': affine,
    'smooth': smooth,
    'gamma': gamma,
    'identity': identity,
}


def make_dataset(
    task: str,
    count: int,
    size: int,
    seed: int = 0,
    channels: int = 3,
) -> list[tuple[Tensor, Tensor]]:
    """count (input, target) pairs of size×size×channels images."""
    try:
        operator = TASKS[task]
    except KeyError:
        raise InvalidArgument(f'unknown task {task!r}; choose from {sorted(TASKS)}') from None
    if count < 1:
        raise InvalidArgument(f'a dataset needs at least one sample, got {count}')
    rng = np.random.default_rng(seed)
    dataset = []
    for _ in range(count):
        image = random_image(rng, size, size, channels)
        dataset.append((image, operator(image)))
    return dataset
