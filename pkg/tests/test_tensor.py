#!/usr/bin/env python
"""Tests for tensor.py
"""
import numpy as np
import pytest
from patchsegpy.tensor import *
from patchsegpy.gradcheck import finite_diff_check
from patchsegpy.tools import DimensionError, NumericError, UsageError

RNG_SEED = 1234


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_matmul_identity():
    out = matmul(Tensor(np.eye(2)), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])


def test_matmul_hand_expansion():
    out = matmul(Tensor([[1, 2]]), Tensor([[3], [4]]))
    assert out.data.tolist() == [[11.0]], 'Matmul expansion wrong'


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as error:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert '2x3' in str(error.value)


def test_matmul_gradient():
    rng = np.random.default_rng(RNG_SEED)
    with precision('float64'):
        a, b = _leaf(rng, 4, 5), _leaf(rng, 5, 3)
        func = lambda: tensor_sum(matmul(a, b))
        assert finite_diff_check(func, a) < 1e-6
        assert finite_diff_check(func, b) < 1e-6


def test_conv2d_one_by_one_doubles():
    image = Tensor(np.arange(12.).reshape(1, 3, 4))
    out = conv2d(image, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, 2 * image.data)


def test_conv2d_valid_window_sum():
    out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))),
                 Tensor([0.0]), padding='valid')
    assert out.data.tolist() == [[[9.0]]]


def test_conv2d_same_keeps_extent():
    out = conv2d(Tensor(np.ones((2, 33, 33))), Tensor(np.ones((5, 2, 3, 3))),
                 Tensor(np.zeros(5)))
    assert out.shape == (5, 33, 33)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((3, 5, 5))), Tensor(np.ones((1, 2, 3, 3))),
               Tensor([0.0]))


def test_conv2d_even_kernel():
    with pytest.raises(UsageError):
        conv2d(Tensor(np.ones((1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))),
               Tensor([0.0]))


def test_conv2d_gradient():
    rng = np.random.default_rng(RNG_SEED)
    with precision('float64'):
        image = _leaf(rng, 2, 8, 8)
        kernels, bias = _leaf(rng, 4, 2, 3, 3), _leaf(rng, 4)
        func = lambda: tensor_sum(conv2d(image, kernels, bias, 'same'))
        assert finite_diff_check(func, image) < 1e-5
        assert finite_diff_check(func, kernels) < 1e-5


def test_conv2d_batch_matches_samples():
    rng = np.random.default_rng(RNG_SEED)
    images = rng.standard_normal((3, 2, 6, 6))
    kernels, bias = Tensor(rng.standard_normal((4, 2, 3, 3))), \
        Tensor(rng.standard_normal(4))
    batched = conv2d(Tensor(images), kernels, bias).data
    for index in range(3):
        single = conv2d(Tensor(images[index]), kernels, bias).data
        np.testing.assert_allclose(batched[index], single, rtol=1e-5,
                                   atol=1e-5)


def test_maxpool_window_max():
    out = maxpool2d(Tensor([[[1, 2], [3, 4]]]))
    assert out.data.tolist() == [[[4.0]]]


def test_maxpool_floor_extent():
    assert maxpool2d(Tensor(np.ones((1, 33, 33)))).shape == (1, 16, 16)


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.ones((1, 4, 4)), requires_grad=True)
    out = maxpool2d(x)
    np.testing.assert_array_equal(out.data, np.ones((1, 2, 2)))
    backward(tensor_sum(out))
    expected = np.zeros((1, 4, 4))
    expected[0, ::2, ::2] = 1
    np.testing.assert_array_equal(x.grad, expected)


def test_activations():
    assert relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert sigmoid(Tensor([0.0])).data.tolist() == [0.5]
    np.testing.assert_allclose(softmax(Tensor(np.zeros(4))).data,
                               np.full(4, 0.25))


def test_activations_reject_non_finite():
    for func in (relu, sigmoid, softmax):
        with pytest.raises(NumericError):
            func(Tensor([0.0, np.nan]))


def test_softmax_normalized_and_shift_invariant():
    rng = np.random.default_rng(RNG_SEED)
    logits = rng.standard_normal(6) * 10
    probs = softmax(Tensor(logits)).data
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1) < 1e-6
    np.testing.assert_allclose(softmax(Tensor(logits + 7.5)).data, probs,
                               atol=1e-6)


def test_slice_mean_values():
    assert slice_mean(Tensor(np.full((1, 3, 3), 7.0))).data.tolist() == [7.0]
    assert slice_mean(Tensor([[[1, 2], [3, 4]]])).data.tolist() == [2.5]


def test_slice_mean_permutation_equivariance():
    rng = np.random.default_rng(RNG_SEED)
    x = rng.standard_normal((7, 5, 5))
    order = rng.permutation(7)
    np.testing.assert_allclose(slice_mean(Tensor(x[order])).data,
                               slice_mean(Tensor(x)).data[order])


def test_slice_mean_gradient_uniform():
    with precision('float64'):
        x = Tensor(np.random.default_rng(RNG_SEED).standard_normal((3, 4, 4)),
                   requires_grad=True)
        out = slice_mean(x)
        backward(matmul(reshape(out, (1, 3)), Tensor([[1.0], [0.0], [0.0]])))
        np.testing.assert_allclose(x.grad[0], np.full((4, 4), 1 / 16))
        np.testing.assert_array_equal(x.grad[1:], 0)


def test_scale_slices():
    x = Tensor(np.random.default_rng(RNG_SEED).standard_normal((3, 4, 4)))
    np.testing.assert_array_equal(scale_slices(x, Tensor(np.ones(3))).data,
                                  x.data)
    np.testing.assert_array_equal(scale_slices(x, Tensor(np.zeros(3))).data,
                                  0)
    with pytest.raises(DimensionError):
        scale_slices(x, Tensor(np.ones(4)))


def test_scale_slices_gradient():
    rng = np.random.default_rng(RNG_SEED)
    with precision('float64'):
        x, scales = _leaf(rng, 3, 4, 4), _leaf(rng, 3)
        weights = Tensor(rng.standard_normal((48, 1)))
        func = lambda: tensor_sum(matmul(
            reshape(scale_slices(x, scales), (1, 48)), weights))
        assert finite_diff_check(func, x) < 1e-6
        assert finite_diff_check(func, scales) < 1e-6


def test_concat_channels():
    parts = [Tensor(np.full((1, 33, 33), float(index))) for index in range(4)]
    out = concat_channels(parts)
    assert out.shape == (4, 33, 33)
    np.testing.assert_array_equal(out.data[:, 0, 0], [0, 1, 2, 3])
    swapped = concat_channels(parts[::-1])
    np.testing.assert_array_equal(swapped.data[:, 0, 0], [3, 2, 1, 0])
    assert concat_channels(parts[:1]).data.tolist() == parts[0].data.tolist()
    with pytest.raises(DimensionError):
        concat_channels([Tensor(np.ones((1, 3, 3))),
                         Tensor(np.ones((1, 4, 3)))])


def test_dropout_modes():
    x = Tensor(np.ones(100))
    rng = np.random.default_rng(RNG_SEED)
    assert dropout(x, 0.0, True, rng) is x
    assert dropout(x, 0.5, False, rng) is x
    first = dropout(x, 0.5, True, np.random.default_rng(7)).data
    second = dropout(x, 0.5, True, np.random.default_rng(7)).data
    assert first.tobytes() == second.tobytes(), 'Same seed, different mask'
    assert set(np.unique(first)) <= {0.0, 2.0}
    with pytest.raises(UsageError):
        dropout(x, 1.0, True, rng)


def test_cross_entropy_values():
    assert cross_entropy(Tensor([1.0, 0, 0, 0]), 0).item() == 0.0
    uniform = cross_entropy(Tensor(np.full(4, 0.25)), 3).item()
    assert abs(uniform - np.log(4)) < 1e-6
    with pytest.raises(IndexError):
        cross_entropy(Tensor(np.full(4, 0.25)), 4)
    # clamped, not infinite
    assert np.isfinite(cross_entropy(Tensor([1.0, 0, 0, 0]), 1).item())


def test_cross_entropy_logit_gradient():
    with precision('float64'):
        logits = Tensor([0.2, -1.0, 0.5, 0.1], requires_grad=True)
        probs = softmax(logits)
        backward(cross_entropy(probs, 2))
        expected = probs.data - np.eye(4)[2]
        np.testing.assert_allclose(logits.grad, expected, atol=1e-12)


def test_cross_entropy_batch_mean():
    probs = Tensor([[0.5, 0.5], [0.25, 0.75]])
    loss = cross_entropy(probs, [0, 1]).item()
    assert abs(loss - (np.log(2) - np.log(0.75)) / 2) < 1e-6


def test_backward_sum_of_leaf():
    x = Tensor(np.arange(5.0), requires_grad=True)
    backward(tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_backward_accumulates_reuse():
    x = Tensor([3.0], requires_grad=True)
    backward(tensor_sum(add(x, x)))
    assert x.grad.tolist() == [2.0]


def test_backward_two_consumers_add_up():
    rng = np.random.default_rng(RNG_SEED)
    values = rng.standard_normal((2, 3))
    weights = Tensor(rng.standard_normal((3, 1)))

    def _branch(x, which):
        if which == 'relu':
            return tensor_sum(relu(x))
        return tensor_sum(matmul(x, weights))

    grads = {}
    for which in ('relu', 'matmul'):
        x = Tensor(values, requires_grad=True)
        backward(_branch(x, which))
        grads[which] = x.grad
    x = Tensor(values, requires_grad=True)
    backward(add(_branch(x, 'relu'), _branch(x, 'matmul')))
    np.testing.assert_allclose(x.grad, grads['relu'] + grads['matmul'])


def test_backward_needs_scalar():
    with pytest.raises(UsageError):
        backward(Tensor(np.ones(3), requires_grad=True))


def test_graph_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = relu(x)
    loss = tensor_sum(add(y, y))
    graph = Graph(loss)
    assert graph.nodes[0] is x
    assert graph.nodes[-1] is loss
    assert len(graph) == 4


def test_precision_modes():
    assert get_precision() == 'float32'
    assert Tensor([1.0]).dtype == np.float32
    with precision('float64'):
        wide = Tensor([1.0])
        assert wide.dtype == np.float64
    assert get_precision() == 'float32'
    with pytest.raises(UsageError):
        add(Tensor([1.0]), wide)
    with pytest.raises(UsageError):
        set_precision('float16')


def test_deterministic_forward():
    rng = np.random.default_rng(RNG_SEED)
    image = rng.standard_normal((2, 9, 9))
    kernels = rng.standard_normal((3, 2, 3, 3))
    runs = [conv2d(Tensor(image), Tensor(kernels),
                   Tensor(np.zeros(3))).data.tobytes() for _ in range(2)]
    assert runs[0] == runs[1]
