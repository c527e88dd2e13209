from __future__ import annotations

import os
from typing import Optional, Tuple

from .errors import ConfigError

__all__ = (
    'VERSION',
    'SEED_ENV',
    'DEFAULT_SEED',
    'N_CHANNELS',
    'WINDOW_LENGTH',
    'WINDOW_STRIDE',
    'DOWNSAMPLE_FACTOR',
    'MIN_PADDED_LENGTH',
    'SAMPLE_RATE_HZ',
    'STD_EPSILON',
    'TUNING_LEARNING_RATES',
    'TUNING_BATCH_SIZES',
    'TUNING_EPOCHS',
    'resolve_seed',
)

VERSION = '1.0.0'

SEED_ENV = 'EGD_SEED'
DEFAULT_SEED = 0

SAMPLE_RATE_HZ = 30.0

N_CHANNELS = 26
WINDOW_LENGTH = 30
WINDOW_STRIDE = 20
DOWNSAMPLE_FACTOR = 2
MIN_PADDED_LENGTH = 10

STD_EPSILON = 1e-8

TUNING_LEARNING_RATES: Tuple[float, ...] = (1e-2, 1e-3, 1e-4)
TUNING_BATCH_SIZES: Tuple[int, ...] = (16, 32)
TUNING_EPOCHS: Tuple[int, ...] = (50, 100)


def resolve_seed(explicit: Optional[int] = None) -> int:
    """
    Resolves the seed to use for a run.

    The explicit value wins, then the ``EGD_SEED`` environment variable,
    then :data:`DEFAULT_SEED`.

    Raises
    ------
    :class:`ConfigError`
        ``EGD_SEED`` is set but is not an integer.
    """
    if explicit is not None:
        return int(explicit)

    value = os.environ.get(SEED_ENV)
    if value is None or value.strip() == '':
        return DEFAULT_SEED

    try:
        return int(value)
    except ValueError:
        raise ConfigError(f'{SEED_ENV} must be an integer, got {value!r}')
