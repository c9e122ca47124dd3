"""Project-level defaults, read from settings.DGF with library fallbacks."""

from django.conf import settings

from dgf.guidance import DEFAULT_GUIDANCE_CHANNELS
from dgf.layer import DEFAULT_EPS, DEFAULT_RADIUS
from dgf.train import DEFAULT_LEARNING_RATE, DEFAULT_LOW_RES_SHORT_SIDE
from dgf.verify import DEFAULT_TOLERANCE

DEFAULTS = {
    'RADIUS': DEFAULT_RADIUS,
    'EPS': DEFAULT_EPS,
    'LOW_RES_SHORT_SIDE': DEFAULT_LOW_RES_SHORT_SIDE,
    'GUIDANCE_CHANNELS': DEFAULT_GUIDANCE_CHANNELS,
    'LEARNING_RATE': DEFAULT_LEARNING_RATE,
    'GRADCHECK_TOLERANCE': DEFAULT_TOLERANCE,
    'BENCH_REPEAT': 3,
    'TOY_SAMPLES': 20,
    'TOY_SIZE': 96,
    'TOY_STEPS': 500,
}


def get_setting(name: str):
    """settings.DGF[name], or the library default when the project leaves it out."""
    if name not in DEFAULTS:
        raise KeyError(f'unknown DGF setting {name!r}')
    return getattr(settings, 'DGF', {}).get(name, DEFAULTS[name])
