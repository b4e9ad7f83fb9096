#!/usr/bin/env python
"""Tests for classifier.py
"""
import numpy as np
import pytest
from patchsegpy.classifier import *
from patchsegpy.gradcheck import finite_diff_check, shrunken_model
from patchsegpy.io import read_checkpoint, write_checkpoint
from patchsegpy.optimizer import init_state
from patchsegpy.tensor import Tensor, precision
from patchsegpy.tools import (MODALITIES, DimensionError, FormatError,
                              ModalityError, UsageError, make_rng)

SMALL = dict(omega=9, slices=3, kernels=(2, 2, 2, 3, 3, 3), hidden=(8, 4))


def _patches(rng, shape):
    return {modality: Tensor(rng.standard_normal(shape))
            for modality in MODALITIES}


def _zero_model(**kwargs):
    params = init_model_params(rng=0, **kwargs)
    for tensor in parameter_tensors(params).values():
        tensor.data[...] = 0
    return params


def test_full_size_shapes():
    params = init_model_params(rng=0)
    assert [kernels.shape[0] for kernels, _ in params.classifier.conv_stack] \
        == [32, 32, 32, 64, 64, 64]
    # 64 channels of 8 x 8 after two pools of a 33 x 33 map
    assert params.classifier.dense[0][0].shape == (64, 64 * 8 * 8)
    assert params.classifier.dense[1][0].shape == (32, 64)
    assert params.classifier.dense[2][0].shape == (4, 32)
    probs = forward(_patches(np.random.default_rng(0), (7, 33, 33)), params)
    assert probs.shape == (4,)
    assert abs(float(probs.data.sum()) - 1) < 1e-5


def test_zero_model_is_uniform():
    params = _zero_model()
    probs = forward({modality: Tensor(np.zeros((7, 33, 33)))
                     for modality in MODALITIES}, params)
    np.testing.assert_allclose(probs.data, np.full(4, 0.25))


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    with precision('float64'):
        params = init_model_params(rng=rng, **SMALL)
        for _ in range(5):
            probs = forward(_patches(rng, (3, 9, 9)), params).data
            assert abs(probs.sum() - 1) < 1e-9


def test_patch_validation():
    params = init_model_params(rng=0, **SMALL)
    patches = _patches(np.random.default_rng(0), (3, 9, 9))
    del patches['T1c']
    with pytest.raises(ModalityError):
        forward(patches, params)
    patches = _patches(np.random.default_rng(0), (3, 9, 9))
    patches['T2'] = Tensor(np.zeros((3, 11, 11)))
    with pytest.raises(DimensionError):
        forward(patches, params)


def test_training_needs_rng():
    params = init_model_params(rng=0, **SMALL)
    with pytest.raises(UsageError):
        forward(_patches(np.random.default_rng(0), (3, 9, 9)), params,
                training=True)


def test_invalid_architectures():
    with pytest.raises(UsageError):
        init_model_params(classes=1)
    with pytest.raises(UsageError):
        init_model_params(kernels=(2, 2, 2))
    with pytest.raises(UsageError):
        init_model_params(omega=3)


def test_loss_values():
    params = _zero_model(**SMALL)
    patches = _patches(np.random.default_rng(1), (3, 9, 9))
    uniform = loss(patches, 2, params, make_rng(0)).item()
    assert abs(uniform - np.log(4)) < 1e-6
    params.classifier.dense[-1][1].data[2] = 1000
    assert loss(patches, 2, params, make_rng(0)).item() == 0.0


def test_predict_one_hot_and_ties():
    params = _zero_model(**SMALL)
    patches = _patches(np.random.default_rng(1), (3, 9, 9))
    assert predict(patches, params) == 0
    params.classifier.dense[-1][1].data[3] = 5
    assert predict(patches, params) == 3


def test_predict_invariant_to_shift_and_scale():
    rng = np.random.default_rng(4)
    params = init_model_params(rng=rng, **SMALL)
    batch = _patches(rng, (16, 3, 9, 9))
    before = predict(batch, params)
    weights, bias = params.classifier.dense[-1]
    bias.data += 3.0
    assert np.array_equal(predict(batch, params), before)
    weights.data *= 2.0
    bias.data *= 2.0
    assert np.array_equal(predict(batch, params), before)


def test_batch_matches_single():
    rng = np.random.default_rng(5)
    params = init_model_params(rng=rng, **SMALL)
    batch = _patches(rng, (6, 3, 9, 9))
    probs = forward(batch, params).data
    assert probs.shape == (6, 4)
    for index in range(6):
        single = {modality: Tensor(batch[modality].data[index])
                  for modality in MODALITIES}
        np.testing.assert_allclose(forward(single, params).data,
                                   probs[index], atol=1e-6)
        assert predict(single, params) == predict(batch, params)[index]


def test_eval_mode_deterministic():
    params = init_model_params(rng=6, **SMALL)
    patches = _patches(np.random.default_rng(6), (3, 9, 9))
    first = forward(patches, params).data.tobytes()
    assert forward(patches, params).data.tobytes() == first


def test_se_ablation_changes_output():
    patches = _patches(np.random.default_rng(7), (3, 9, 9))
    with_se = logits(patches, init_model_params(rng=7, **SMALL)).data
    without = logits(patches, init_model_params(rng=7, se_enabled=False,
                                                **SMALL)).data
    assert not np.allclose(with_se, without)


def test_parameter_names():
    names = parameter_tensors(init_model_params(rng=0, **SMALL))
    assert 'conversion/FLAIR/w1' in names
    assert 'conv/5/kernels' in names
    assert 'dense/2/bias' in names
    assert len(names) == 4 * 4 + 6 * 2 + 3 * 2


def test_save_load_bitwise(tmp_path):
    params = init_model_params(rng=8, **SMALL)
    path = tmp_path / 'model.p3d'
    save_params(params, path, metadata={'seed': 8})
    loaded, state, extra = load_checkpoint(path)
    assert state is None
    assert extra == {'seed': 8}
    assert hyperparameters(loaded) == hyperparameters(params)
    original = parameter_tensors(params)
    for name, tensor in parameter_tensors(loaded).items():
        assert tensor.data.tobytes() == original[name].data.tobytes(), name
    patches = _patches(np.random.default_rng(8), (3, 9, 9))
    assert forward(patches, loaded).data.tobytes() \
        == forward(patches, params).data.tobytes()


def test_save_load_optimizer_state(tmp_path):
    params = init_model_params(rng=9, **SMALL)
    state = init_state(params, rho=0.9)
    state.sq_grad['conv/0/bias'][...] = 0.25
    state.steps = 12
    path = tmp_path / 'model.p3d'
    save_params(params, path, state=state)
    _, loaded, _ = load_checkpoint(path)
    assert loaded.steps == 12
    assert loaded.rho == pytest.approx(0.9)
    np.testing.assert_array_equal(loaded.sq_grad['conv/0/bias'], 0.25)
    assert set(loaded.sq_delta) == set(state.sq_delta)


def test_corrupt_checkpoints(tmp_path):
    path = tmp_path / 'model.p3d'
    save_params(init_model_params(rng=0, **SMALL), path)
    content = path.read_bytes()
    truncated = tmp_path / 'truncated.p3d'
    truncated.write_bytes(content[:-10])
    with pytest.raises(FormatError):
        load_params(truncated)
    wrong = tmp_path / 'wrong.p3d'
    wrong.write_bytes(b'X' + content[1:])
    with pytest.raises(FormatError):
        load_params(wrong)
    with pytest.raises(FormatError):
        load_params(tmp_path / 'missing.p3d')


def test_incomplete_optimizer_state(tmp_path):
    params = init_model_params(rng=0, **SMALL)
    path = tmp_path / 'model.p3d'
    save_params(params, path, init_state(params))
    name = f'adadelta/sq_grad/{next(iter(parameter_tensors(params)))}'
    arrays, meta = read_checkpoint(path)
    del arrays[name]
    write_checkpoint(path, arrays, meta)
    with pytest.raises(FormatError, match=name):
        load_checkpoint(path)

    save_params(params, path, init_state(params))
    arrays, meta = read_checkpoint(path)
    del meta['adadelta.steps']
    write_checkpoint(path, arrays, meta)
    with pytest.raises(FormatError, match='adadelta.steps'):
        load_checkpoint(path)


def test_shrunken_model_gradient():
    with precision('float64'):
        params, patches, target = shrunken_model(seed=3)
        func = lambda: loss(patches, target, params, make_rng(3))
        for name, tensor in parameter_tensors(params).items():
            assert finite_diff_check(func, tensor) < 1e-4, name
