"""### Finite-difference gradient verification

`finite_diff_check()` compares the analytic gradient of a scalar tensor
function with central differences. `run_suite()` applies it to every
primitive in `patchsegpy.tensor`, to the conversion block and to a shrunken
end-to-end model, all in float64.
"""
__all__ = [
    'finite_diff_check',
    'run_suite',
    'SUITE_TOLERANCE',
    ]

import logging
import time
import numpy as np
from . import classifier
from . import conversion
from .tensor import (Tensor, precision, get_precision, matmul, transpose,
                     add_bias, conv2d, maxpool2d, relu, sigmoid, softmax,
                     slice_mean, scale_slices, concat_channels, dropout,
                     cross_entropy, reshape, tensor_sum)
from .tools import MODALITIES, UsageError, make_rng

LOGGER = logging.getLogger(__name__)

# Maximum relative error accepted by the suite
SUITE_TOLERANCE = 1e-4


def finite_diff_check(func, x, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    For every coordinate i the numeric derivative is
    (f(x+h e_i) - f(x-h e_i)) / 2h and the error is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    Args:
        func (callable): Maps the tensors it closes over (including `x`) to a
                         one element Tensor. Called with no arguments.
        x (Tensor): Input to differentiate with respect to; must require
                    gradients. Its data is perturbed in place and restored.
        step (float): (default: 1e-5) Difference step h.

    Returns:
        (float): The maximum relative error over coordinates.

    Raises:
        UsageError: Outside float64 mode, or if `x` does not require
                    gradients.

    Examples:
        ```python
        with precision('float64'):
            x = Tensor([3.0], requires_grad=True)
            error = finite_diff_check(lambda: tensor_sum(sigmoid(x)), x)
        ```
    """
    if get_precision() != 'float64' or x.dtype != np.float64:
        raise UsageError('finite_diff_check runs in float64 mode only')
    if not x.requires_grad:
        raise UsageError('finite_diff_check: x must require gradients')

    x.zero_grad()
    func().backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    flat_numeric = numeric.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + step
        upper = func().item()
        flat[index] = original - step
        lower = func().item()
        flat[index] = original
        flat_numeric[index] = (upper - lower) / (2 * step)

    errors = (np.abs(analytic - numeric)
              / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric)))
    return float(errors.max()) if errors.size else 0.0


def _leaf(rng, *shape, low=None):
    """Random float64 leaf; `low` keeps |values| >= low away from kinks."""
    values = rng.standard_normal(shape)
    if low is not None:
        values = np.sign(values) * (np.abs(values) + low)
    return Tensor(values, requires_grad=True)


def _weighted(out, weights):
    """Scalar <out, weights> so every output coordinate matters."""
    row = reshape(out, (1, out.size))
    return tensor_sum(matmul(row, Tensor(np.reshape(weights, (-1, 1)))))


def _primitive_cases(rng):
    """Yields (name, func, [inputs]) for one random instance per primitive."""
    a, b = _leaf(rng, 4, 5), _leaf(rng, 5, 3)
    weights = rng.standard_normal(12)
    yield 'matmul', lambda: _weighted(matmul(a, b), weights), [a, b]

    m = _leaf(rng, 3, 4)
    weights_t = rng.standard_normal(12)
    yield 'transpose', lambda: _weighted(transpose(m), weights_t), [m]

    x, bias = _leaf(rng, 3, 4), _leaf(rng, 4)
    weights_b = rng.standard_normal(12)
    yield 'add_bias', lambda: _weighted(add_bias(x, bias), weights_b), \
        [x, bias]

    image = _leaf(rng, 2, 8, 8)
    kernels, kbias = _leaf(rng, 4, 2, 3, 3), _leaf(rng, 4)
    weights_c = rng.standard_normal(4 * 8 * 8)
    yield 'conv2d', \
        lambda: _weighted(conv2d(image, kernels, kbias, 'same'), weights_c), \
        [image, kernels, kbias]

    image_v = _leaf(rng, 2, 6, 6)
    kernels_v, kbias_v = _leaf(rng, 3, 2, 3, 3), _leaf(rng, 3)
    weights_v = rng.standard_normal(3 * 4 * 4)
    yield 'conv2d_valid', \
        lambda: _weighted(conv2d(image_v, kernels_v, kbias_v, 'valid'),
                          weights_v), \
        [image_v, kernels_v, kbias_v]

    pooled = _leaf(rng, 2, 5, 7)
    weights_p = rng.standard_normal(2 * 2 * 3)
    yield 'maxpool2d', lambda: _weighted(maxpool2d(pooled), weights_p), \
        [pooled]

    act = _leaf(rng, 10, low=0.1)
    weights_a = rng.standard_normal(10)
    yield 'relu', lambda: _weighted(relu(act), weights_a), [act]
    yield 'sigmoid', lambda: _weighted(sigmoid(act), weights_a), [act]

    logits = _leaf(rng, 4)
    weights_s = rng.standard_normal(4)
    yield 'softmax', lambda: _weighted(softmax(logits), weights_s), [logits]

    patch = _leaf(rng, 3, 4, 4)
    weights_m = rng.standard_normal(3)
    yield 'slice_mean', lambda: _weighted(slice_mean(patch), weights_m), \
        [patch]

    scales = _leaf(rng, 3)
    weights_x = rng.standard_normal(3 * 4 * 4)
    yield 'scale_slices', \
        lambda: _weighted(scale_slices(patch, scales), weights_x), \
        [patch, scales]

    parts = [_leaf(rng, 1, 3, 3), _leaf(rng, 2, 3, 3)]
    weights_k = rng.standard_normal(3 * 3 * 3)
    yield 'concat_channels', \
        lambda: _weighted(concat_channels(parts), weights_k), parts

    dropped = _leaf(rng, 10)
    seed = int(rng.integers(2**31))
    yield 'dropout', \
        lambda: _weighted(dropout(dropped, 0.5, True, make_rng(seed)),
                          weights_a), [dropped]

    target = int(rng.integers(4))
    yield 'cross_entropy', \
        lambda: cross_entropy(softmax(logits), target), [logits]


def _conversion_case(rng):
    params = conversion.init_conversion_params(slices=3, reduction=1,
                                               out_channels=2, rng=rng)
    for tensor in conversion.parameter_tensors(params).values():
        tensor.data[...] = rng.standard_normal(tensor.shape)
    patch = _leaf(rng, 3, 5, 5)
    weights = rng.standard_normal(2 * 5 * 5)
    func = lambda: _weighted(conversion.convert(patch, params), weights)
    return func, [patch] + list(conversion.parameter_tensors(params).values())


def shrunken_model(seed=0, omega=9, slices=3):
    """Returns (params, patches, target) for the small end-to-end check.

    The model uses omega=9, L=3, kernel counts [2,2,2,3,3,3] and 8/4 hidden
    units.
    """
    rng = make_rng(seed)
    params = classifier.init_model_params(
        omega=omega, slices=slices, reduction=2, bottleneck_channels=1,
        classes=4, kernels=(2, 2, 2, 3, 3, 3), hidden=(8, 4), dropout=0.5,
        rng=rng)
    patches = {modality: Tensor(rng.standard_normal((slices, omega, omega)))
               for modality in MODALITIES}
    return params, patches, int(rng.integers(4))


def _model_case(seed):
    params, patches, target = shrunken_model(seed)
    func = lambda: classifier.loss(patches, target, params, make_rng(seed))
    return func, list(classifier.parameter_tensors(params).values())


def run_suite(seeds=20, step=1e-5, tolerance=SUITE_TOLERANCE):
    """Runs the float64 finite-difference suite.

    Args:
        seeds (int): (default: 20) Random instances per primitive.
        step (float): (default: 1e-5) Difference step.
        tolerance (float): (default: 1e-4) Max relative error to pass.

    Returns:
        list: (name, max_relative_error, passed) for each check.
    """
    results = {}
    start = time.time()
    with precision('float64'):
        for seed in range(seeds):
            rng = make_rng(seed)
            for name, func, inputs in _primitive_cases(rng):
                error = max(finite_diff_check(func, x, step) for x in inputs)
                results[name] = max(results.get(name, 0.0), error)
            func, inputs = _conversion_case(rng)
            error = max(finite_diff_check(func, x, step) for x in inputs)
            results['conversion'] = max(results.get('conversion', 0.0), error)
        func, inputs = _model_case(0)
        results['end_to_end'] = max(finite_diff_check(func, x, step)
                                    for x in inputs)

    report = []
    for name, error in results.items():
        passed = error < tolerance
        LOGGER.info('gradcheck %-16s max_rel_err=%.3e %s', name, error,
                    'pass' if passed else 'FAIL')
        report.append((name, error, passed))
    LOGGER.info('gradcheck finished in %.1f s', time.time() - start)
    return report
