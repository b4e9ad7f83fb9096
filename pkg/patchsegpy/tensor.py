"""### Dense tensors with reverse-mode automatic differentiation

Every primitive the network needs is a function here taking and returning
`Tensor` objects. Each result records its operands and a local backward rule;
`backward()` walks the recorded graph in reverse topological order.

Primitives accept an optional leading batch axis, e.g. `conv2d` takes
`C x H x W` or `N x C x H x W`, so mini-batches run as single array
operations.

Precision is a process-wide mode: `'float32'` for training and inference,
`'float64'` for gradient verification. Operands of one operation must share
a dtype.
"""
__all__ = [
    'Tensor',
    'Graph',
    'set_precision',
    'get_precision',
    'precision',
    'matmul',
    'transpose',
    'add',
    'add_bias',
    'reshape',
    'flatten',
    'tensor_sum',
    'conv2d',
    'maxpool2d',
    'relu',
    'sigmoid',
    'softmax',
    'slice_mean',
    'scale_slices',
    'concat_channels',
    'dropout',
    'cross_entropy',
    'backward',
    ]

import contextlib
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit
from .tools import DimensionError, NumericError, UsageError, _shape_str

_DTYPES = {'float32': np.float32, 'float64': np.float64}
_MODE = {'precision': 'float32'}

# Probabilities are clamped to this before the log in cross_entropy
LOG_CLAMP = 1e-12


def set_precision(mode):
    """Sets the process-wide precision mode.

    Args:
        mode (str): 'float32' (runtime) or 'float64' (verification).

    Raises:
        UsageError: If mode is not recognized.
    """
    if mode not in _DTYPES:
        raise UsageError(f'Unknown precision mode {mode!r}, '
                         f'expected one of {sorted(_DTYPES)}')
    _MODE['precision'] = mode


def get_precision():
    """Returns the current precision mode string."""
    return _MODE['precision']


@contextlib.contextmanager
def precision(mode):
    """Context manager running a block in the given precision mode.

    Examples:
        ```python
        with precision('float64'):
            x = Tensor(np.ones(3), requires_grad=True)
        ```
    """
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


class Tensor:
    """N-dimensional real array with optional gradient tracking.

    Args:
        data (array_like): Values, cast to the current precision mode.
        requires_grad (bool): (default: False) Track gradients for this
                              tensor.
    """

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPES[get_precision()])
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = 'leaf'

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        """Returns the value of a single element tensor as a float."""
        if self.data.size != 1:
            raise UsageError('item() needs a single element tensor, got '
                             + _shape_str(self.shape))
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        """Returns the underlying array (not a copy)."""
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """See #backward()."""
        return backward(self)

    def __repr__(self):
        return (f'Tensor(shape={_shape_str(self.shape)}, op={self.op}, '
                f'requires_grad={self.requires_grad})')


def _result(data, parents, backward_rule, op):
    """Makes the output tensor of an operation and records its node."""
    dtypes = {parent.dtype for parent in parents}
    if len(dtypes) > 1:
        raise UsageError(f'{op}: mixed precision operands '
                         f'{sorted(str(d) for d in dtypes)}')
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=parents[0].dtype)
    out.grad = None
    out.requires_grad = any(parent.requires_grad for parent in parents)
    out.op = op
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_rule
    else:
        out._parents = ()
        out._backward = None
    return out


class Graph:
    """Operation records reachable from a root tensor, topologically ordered.

    Only tensors that require gradients are recorded; every node's operands
    precede it in `nodes`.

    Args:
        root (Tensor): Output tensor the graph ends in.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = self._topological_order(root)

    @staticmethod
    def _topological_order(root):
        order = []
        visited = set()
        # Iterative post-order DFS, deep graphs must not hit recursion limits
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __len__(self):
        return len(self.nodes)

    def backward(self, seed):
        """Propagates `seed` (the root gradient) to every node.

        Returns:
            dict: id(tensor) -> gradient array for every recorded node.
        """
        grads = {id(self.root): seed}
        for node in reversed(self.nodes):
            grad = grads.get(id(node))
            if grad is None or node._backward is None:
                continue
            for parent, parent_grad in zip(node._parents,
                                           node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad
        return grads


def backward(loss):
    """Populates `grad` on every tensor requiring gradients below `loss`.

    Gradients add up over multiple uses of a tensor and over repeated
    backward calls; reset them with `Tensor.zero_grad()` between steps.

    Args:
        loss (Tensor): A single element tensor.

    Returns:
        (Graph): The traversed graph.

    Raises:
        UsageError: If `loss` is not a scalar.
    """
    if loss.size != 1:
        raise UsageError('backward needs a scalar loss, got shape '
                         + _shape_str(loss.shape))
    graph = Graph(loss)
    grads = graph.backward(np.ones_like(loss.data))
    for node in graph.nodes:
        grad = grads.get(id(node))
        if grad is None:
            continue
        node.grad = grad.copy() if node.grad is None else node.grad + grad
    return graph


def _check_finite(x, op):
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f'{op}: non-finite input')


# Linear algebra

def matmul(a, b):
    """Matrix product of `a` (m x k) and `b` (k x n).

    Raises:
        DimensionError: If the operands are not matrices with matching inner
                        extents.

    Examples:
        ```python
        matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data  # [[11.]]
        ```
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f'matmul: cannot multiply {_shape_str(a.shape)} '
                             f'by {_shape_str(b.shape)}')

    def _backward(grad):
        return grad @ b.data.T, a.data.T @ grad

    return _result(a.data @ b.data, (a, b), _backward, 'matmul')


def transpose(a):
    """Transpose of a matrix."""
    if a.ndim != 2:
        raise DimensionError('transpose: expected a matrix, got '
                             + _shape_str(a.shape))
    return _result(a.data.T, (a,), lambda grad: (grad.T,), 'transpose')


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f'add: {_shape_str(a.shape)} and '
                             f'{_shape_str(b.shape)} differ')
    return _result(a.data + b.data, (a, b), lambda grad: (grad, grad), 'add')


def add_bias(x, bias):
    """Adds a vector along the last axis of `x`."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError(f'add_bias: bias {_shape_str(bias.shape)} does '
                             f'not fit {_shape_str(x.shape)}')

    def _backward(grad):
        return grad, grad.reshape(-1, bias.shape[0]).sum(axis=0)

    return _result(x.data + bias.data, (x, bias), _backward, 'add_bias')


def reshape(x, shape):
    """Reshapes `x`, keeping the number of elements."""
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f'reshape: cannot view {_shape_str(x.shape)} as '
                             f'{_shape_str(shape)}')
    old_shape = x.shape
    return _result(x.data.reshape(shape), (x,),
                   lambda grad: (grad.reshape(old_shape),), 'reshape')


def flatten(x, batched=False):
    """Flattens `x` to a vector, or to N x features when `batched`."""
    if batched:
        return reshape(x, (x.shape[0], x.size // max(x.shape[0], 1)))
    return reshape(x, (x.size,))


def tensor_sum(x, mean=False):
    """Sum (or mean) of all elements as a one element tensor."""
    scale = 1.0 / x.size if mean else 1.0
    total = x.data.sum() * scale

    def _backward(grad):
        return (np.full(x.shape, grad.reshape(-1)[0] * scale,
                        dtype=x.dtype),)

    return _result(np.reshape(total, (1,)), (x,), _backward,
                   'mean' if mean else 'sum')


# Convolution and pooling

def _as_batch(x, ndim):
    """Returns (array with a leading batch axis, whether one was added)."""
    if x.ndim == ndim - 1:
        return x.data[np.newaxis], True
    if x.ndim == ndim:
        return x.data, False
    raise DimensionError(f'expected {ndim - 1} or {ndim} axes, got '
                         + _shape_str(x.shape))


def _correlate(batch, kernels, pad):
    """Cross-correlates N x C x H x W with Co x C x k x k, zero padding `pad`.
    """
    if pad:
        batch = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    size = kernels.shape[-1]
    windows = sliding_window_view(batch, (size, size), axis=(2, 3))
    out = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), windows


def conv2d(inputs, kernels, bias, padding='same'):
    """2D cross-correlation (no kernel flip) plus a per-channel bias.

    Args:
        inputs (Tensor): C_in x H x W, or N x C_in x H x W.
        kernels (Tensor): C_out x C_in x k x k with odd k.
        bias (Tensor): C_out.
        padding (str): (default: 'same') 'same' zero pads so the output keeps
                       H x W, 'valid' gives H-k+1 x W-k+1.

    Returns:
        (Tensor): C_out x H' x W' (batched if the input was).

    Raises:
        DimensionError: Channel mismatch or malformed kernel/bias shapes.
        UsageError: Even kernel size or unknown padding.
    """
    batch, added = _as_batch(inputs, 4)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError('conv2d: kernels must be C_out x C_in x k x k, '
                             'got ' + _shape_str(kernels.shape))
    if kernels.shape[1] != batch.shape[1]:
        raise DimensionError(f'conv2d: input {_shape_str(inputs.shape)} has '
                             f'{batch.shape[1]} channels, kernels '
                             f'{_shape_str(kernels.shape)} expect '
                             f'{kernels.shape[1]}')
    if bias.shape != (kernels.shape[0],):
        raise DimensionError(f'conv2d: bias {_shape_str(bias.shape)} does not '
                             f'match {kernels.shape[0]} output channels')
    size = kernels.shape[-1]
    if size % 2 == 0:
        raise UsageError(f'conv2d: kernel size must be odd, got {size}')
    if padding == 'same':
        pad = (size - 1) // 2
    elif padding == 'valid':
        pad = 0
    else:
        raise UsageError(f'conv2d: unknown padding {padding!r}')

    out, windows = _correlate(batch, kernels.data, pad)
    out += bias.data[np.newaxis, :, np.newaxis, np.newaxis]

    def _backward(grad):
        grad = grad[np.newaxis] if added else grad
        grad_kernels = np.tensordot(grad, windows, axes=([0, 2, 3],
                                                         [0, 2, 3]))
        grad_bias = grad.sum(axis=(0, 2, 3))
        flipped = kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_inputs, _ = _correlate(grad, np.ascontiguousarray(flipped),
                                    size - 1 - pad)
        if added:
            grad_inputs = grad_inputs[0]
        return grad_inputs, grad_kernels, grad_bias

    return _result(out[0] if added else out, (inputs, kernels, bias),
                   _backward, 'conv2d')


def maxpool2d(inputs, window=2, stride=2):
    """2 x 2 max-pooling with stride 2.

    An odd trailing row/column is dropped. The gradient goes to the first
    maximum of each window in row-major order.

    Raises:
        UsageError: For other window/stride values or H, W < 2.
    """
    if window != 2 or stride != 2:
        raise UsageError('maxpool2d supports window=2, stride=2 only')
    batch, added = _as_batch(inputs, 4)
    count, channels, height, width = batch.shape
    if height < 2 or width < 2:
        raise UsageError('maxpool2d: input must be at least 2 x 2, got '
                         + _shape_str(inputs.shape))
    half_h, half_w = height // 2, width // 2
    blocks = (batch[:, :, :2 * half_h, :2 * half_w]
              .reshape(count, channels, half_h, 2, half_w, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(count, channels, half_h, half_w, 4))
    argmax = blocks.argmax(axis=-1)[..., np.newaxis]
    out = np.take_along_axis(blocks, argmax, axis=-1)[..., 0]

    def _backward(grad):
        grad = grad[np.newaxis] if added else grad
        routed = np.zeros_like(blocks)
        np.put_along_axis(routed, argmax, grad[..., np.newaxis], axis=-1)
        full = np.zeros_like(batch)
        full[:, :, :2 * half_h, :2 * half_w] = (
            routed.reshape(count, channels, half_h, half_w, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(count, channels, 2 * half_h, 2 * half_w))
        return (full[0] if added else full,)

    return _result(out[0] if added else out, (inputs,), _backward,
                   'maxpool2d')


# Activations

def relu(x):
    """Elementwise max(0, x).

    Raises:
        NumericError: On non-finite input.
    """
    _check_finite(x, 'relu')
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0), (x,),
                   lambda grad: (grad * positive,), 'relu')


def sigmoid(x):
    """Elementwise 1/(1+exp(-x)).

    Raises:
        NumericError: On non-finite input.
    """
    _check_finite(x, 'sigmoid')
    out = expit(x.data)
    return _result(out, (x,), lambda grad: (grad * out * (1 - out),),
                   'sigmoid')


def softmax(logits):
    """Softmax over the last axis, computed after subtracting the maximum.

    Raises:
        NumericError: On non-finite input.
    """
    _check_finite(logits, 'softmax')
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    out = exps / exps.sum(axis=-1, keepdims=True)

    def _backward(grad):
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return (out * (grad - inner),)

    return _result(out, (logits,), _backward, 'softmax')


# Slice calibration

def slice_mean(x):
    """Mean of each slice: L x w x w -> L (or N x L x w x w -> N x L).

    Examples:
        ```python
        slice_mean(Tensor([[[1, 2], [3, 4]]])).data  # [2.5]
        ```
    """
    if x.ndim not in (3, 4):
        raise DimensionError('slice_mean: expected L x w x w, got '
                             + _shape_str(x.shape))
    area = x.shape[-1] * x.shape[-2]

    def _backward(grad):
        return (np.broadcast_to(grad[..., np.newaxis, np.newaxis] / area,
                                x.shape).copy(),)

    return _result(x.data.mean(axis=(-2, -1)), (x,), _backward, 'slice_mean')


def scale_slices(x, scales):
    """Multiplies slice l of `x` by `scales[l]`.

    Args:
        x (Tensor): L x w x w (or N x L x w x w).
        scales (Tensor): L (or N x L).

    Raises:
        DimensionError: If the slice counts differ.
    """
    if x.ndim not in (3, 4) or scales.shape != x.shape[:-2]:
        raise DimensionError(f'scale_slices: scales {_shape_str(scales.shape)}'
                             f' do not fit {_shape_str(x.shape)}')
    expanded = scales.data[..., np.newaxis, np.newaxis]

    def _backward(grad):
        return grad * expanded, (grad * x.data).sum(axis=(-2, -1))

    return _result(x.data * expanded, (x, scales), _backward, 'scale_slices')


def concat_channels(parts):
    """Concatenates C_i x H x W tensors (or batched) along the channel axis.

    Raises:
        DimensionError: If spatial extents (or batch sizes) differ.
    """
    parts = list(parts)
    if not parts:
        raise UsageError('concat_channels needs at least one part')
    ndim = parts[0].ndim
    if ndim not in (3, 4):
        raise DimensionError('concat_channels: expected C x H x W parts')
    for part in parts[1:]:
        if part.ndim != ndim or part.shape[:-3] != parts[0].shape[:-3] \
                or part.shape[-2:] != parts[0].shape[-2:]:
            raise DimensionError(
                f'concat_channels: {_shape_str(part.shape)} does not '
                f'fit {_shape_str(parts[0].shape)}')
    bounds = np.cumsum([0] + [part.shape[-3] for part in parts])
    out = np.concatenate([part.data for part in parts], axis=-3)

    def _backward(grad):
        return tuple(grad[..., start:stop, :, :]
                     for start, stop in zip(bounds[:-1], bounds[1:]))

    return _result(out, tuple(parts), _backward, 'concat_channels')


def dropout(x, p, training, rng):
    """Inverted dropout.

    Training mode zeroes each activation with probability `p` and scales the
    survivors by 1/(1-p). Evaluation mode returns `x` unchanged.

    Args:
        x (Tensor): Activations.
        p (float): Drop probability in [0, 1).
        training (bool): Apply the mask.
        rng (np.random.Generator): Source of the mask.

    Raises:
        UsageError: If p is outside [0, 1).
    """
    if not 0 <= p < 1:
        raise UsageError(f'dropout probability must be in [0, 1), got {p}')
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.dtype)
    return _result(x.data * keep, (x,), lambda grad: (grad * keep,),
                   'dropout')


def cross_entropy(probs, target):
    """-log(probs[target]) with the probability clamped to >= 1e-12.

    Batched probabilities (N x c) take N targets and give the mean loss.

    Args:
        probs (Tensor): Softmax output, c or N x c.
        target (int/array_like): Class index, or N class indices.

    Returns:
        (Tensor): One element loss.

    Raises:
        IndexError: If a target is outside [0, c).
    """
    batched = probs.ndim == 2
    targets = np.atleast_1d(np.asarray(target, dtype=np.int64))
    table = probs.data if batched else probs.data[np.newaxis]
    classes = table.shape[-1]
    if targets.shape != (table.shape[0],):
        raise DimensionError(f'cross_entropy: {targets.size} targets for '
                             f'probabilities {_shape_str(probs.shape)}')
    if np.any(targets < 0) or np.any(targets >= classes):
        raise IndexError(f'cross_entropy: target {targets.tolist()} outside '
                         f'[0, {classes})')
    rows = np.arange(targets.size)
    picked = np.maximum(table[rows, targets], LOG_CLAMP)
    loss = -np.log(picked).mean()

    def _backward(grad):
        grad_table = np.zeros_like(table)
        grad_table[rows, targets] = -grad.reshape(-1)[0] / (picked
                                                            * targets.size)
        return (grad_table if batched else grad_table[0],)

    return _result(np.reshape(loss, (1,)), (probs,), _backward,
                   'cross_entropy')
