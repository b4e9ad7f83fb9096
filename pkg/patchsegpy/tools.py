#!/usr/bin/env python
"""Tools to be used in patchsegpy functions and classes. Some of the functions
are *hidden functions*.

The exception types raised throughout patchsegpy live here. They subclass
builtin exceptions so a caller can catch either the specific type or the
builtin one.
"""
__all__ = [
    'DimensionError',
    'NumericError',
    'FormatError',
    'UsageError',
    'ModalityError',
    'MODALITIES',
    'make_rng',
    ]

import numpy as np
from tqdm import tqdm

# Channel order of the four co-registered scans everywhere in patchsegpy
MODALITIES = ('FLAIR', 'T1', 'T1c', 'T2')


class DimensionError(ValueError):
    """Shapes or extents that must agree do not."""


class NumericError(ArithmeticError):
    """Non-finite values reached an operation that needs finite input."""


class FormatError(ValueError):
    """A container, checkpoint or header is corrupt or incomplete."""


class UsageError(ValueError):
    """Arguments violate an operation's preconditions."""


class ModalityError(KeyError):
    """A required modality is missing from the input."""


def make_rng(seed):
    """Returns a seeded numpy random generator.

    Args:
        seed (int/np.random.Generator): Seed, or an existing generator which
                                        is passed through unchanged.

    Returns:
        (np.random.Generator): The generator.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _shape_str(shape):
    """Returns a shape as 'AxBxC'"""
    return 'x'.join(str(extent) for extent in shape) or 'scalar'


def _progress(iterable, enabled=False, **kwargs):
    """Wraps an iterable in a tqdm progress bar that is off by default."""
    return tqdm(iterable, disable=not enabled, leave=False, **kwargs)
