#!/usr/bin/env python
"""Tests for training.py
"""
import numpy as np
import pytest
from patchsegpy.training import *
from patchsegpy.classifier import init_model_params, parameter_tensors
from patchsegpy.io import read_json_lines
from patchsegpy.optimizer import init_state
from patchsegpy.tools import MODALITIES, UsageError, make_rng

SMALL = dict(omega=9, slices=3, kernels=(2, 2, 2, 3, 3, 3), hidden=(8, 4))


def _dataset(count, seed=0):
    rng = np.random.default_rng(seed)
    scans = {modality: rng.standard_normal((count, 3, 9, 9))
             for modality in MODALITIES}
    return scans, rng.integers(0, 4, count)


def _weights(params):
    return {name: tensor.data.tobytes()
            for name, tensor in parameter_tensors(params).items()}


def test_train_step_returns_loss():
    params = init_model_params(rng=0, **SMALL)
    scans, labels = _dataset(8)
    state = init_state(params)
    before = _weights(params)
    value = train_step(params, scans, labels, state, make_rng(0))
    assert np.isfinite(value) and value > 0
    assert state.steps == 1
    assert _weights(params) != before


def test_overfits_small_set():
    params = init_model_params(omega=9, slices=3, kernels=(8, 8, 8, 16, 16, 16),
                               hidden=(64, 32), dropout=0.0, rng=1)
    scans, labels = _dataset(64, seed=1)
    history, state = fit(params, scans, labels, epochs=300, batch_size=64,
                         seed=1, target_accuracy=1.0)
    assert history[-1]["accuracy"] == 1.0
    assert state.steps == len(history) <= 300
    assert accuracy(params, scans, labels) == 1.0


def test_same_seed_same_run():
    runs = []
    for _ in range(2):
        params = init_model_params(rng=2, **SMALL)
        scans, labels = _dataset(20, seed=2)
        history, _ = fit(params, scans, labels, epochs=3, batch_size=8, seed=5)
        runs.append((history, _weights(params)))
    assert runs[0] == runs[1]


def test_resume_matches_uninterrupted():
    scans, labels = _dataset(20, seed=3)
    straight = init_model_params(rng=3, **SMALL)
    fit(straight, scans, labels, epochs=3, batch_size=8, seed=7)

    resumed = init_model_params(rng=3, **SMALL)
    _, state = fit(resumed, scans, labels, epochs=1, batch_size=8, seed=7)
    history, _ = fit(resumed, scans, labels, epochs=3, batch_size=8, seed=7,
                     state=state, start_epoch=1)
    assert [record['epoch'] for record in history] == [1, 2]
    assert _weights(resumed) == _weights(straight)


def test_logs(tmp_path):
    params = init_model_params(rng=4, **SMALL)
    scans, labels = _dataset(10, seed=4)
    log_path, timing_path = tmp_path / 'log.jsonl', tmp_path / 'timing.jsonl'
    history, _ = fit(params, scans, labels, epochs=2, batch_size=4, seed=4,
                     log_path=log_path, timing_path=timing_path)
    records = read_json_lines(log_path)
    assert records == history
    assert set(records[0]) == {'epoch', 'loss', 'accuracy', 'seed'}
    assert [entry['epoch'] for entry in read_json_lines(timing_path)] \
        == [0, 1]


def test_zero_epochs_leaves_model():
    params = init_model_params(rng=5, **SMALL)
    before = _weights(params)
    history, state = fit(params, *_dataset(4), epochs=0)
    assert history == [] and state.steps == 0
    assert _weights(params) == before


def test_rejects_bad_input():
    params = init_model_params(rng=0, **SMALL)
    scans, labels = _dataset(4)
    with pytest.raises(UsageError):
        fit(params, scans, labels[:0])
    with pytest.raises(UsageError):
        fit(params, scans, labels, batch_size=0)
