#!/usr/bin/env python
"""Tests for tools.py
"""
import numpy as np
import pytest
from patchsegpy.tools import *
from patchsegpy.tools import _progress, _shape_str


def test_make_rng():
    generator = np.random.default_rng(4)
    assert make_rng(generator) is generator
    assert make_rng(7).random() == make_rng(7).random()
    assert make_rng([7, 1]).random() != make_rng([7, 2]).random()


def test_exception_bases():
    assert issubclass(DimensionError, ValueError)
    assert issubclass(FormatError, ValueError)
    assert issubclass(UsageError, ValueError)
    assert issubclass(NumericError, ArithmeticError)
    with pytest.raises(KeyError):
        raise ModalityError('T1c')


def test_shape_str():
    assert _shape_str((33, 33, 7)) == '33x33x7'
    assert _shape_str(()) == 'scalar'


def test_progress_passthrough():
    assert list(_progress(range(3))) == [0, 1, 2]
    assert MODALITIES == ('FLAIR', 'T1', 'T1c', 'T2')
