"""### Central-voxel classifier

The four converted modality maps are concatenated and classified by a 2D CNN:

    [conv3x3 + ReLU] x 3 -> maxpool 2x2 -> [conv3x3 + ReLU] x 3 -> maxpool 2x2
    -> flatten -> dense 64 + ReLU -> dropout -> dense 32 + ReLU -> dropout
    -> dense c -> softmax

Kernel counts default to 32, 32, 32, 64, 64, 64. All convolutions use same
padding so a 33 x 33 patch goes 33 -> 16 -> 8.

Classes are 0 healthy, 1 edema, 2 non-enhancing/necrotic core, 3 enhancing.
"""
__all__ = [
    'ClassifierParams',
    'ModelParams',
    'CLASS_NAMES',
    'init_model_params',
    'parameter_tensors',
    'hyperparameters',
    'forward',
    'logits',
    'loss',
    'predict',
    'save_params',
    'load_params',
    'load_checkpoint',
    ]

from dataclasses import dataclass, field
import logging
import numpy as np
from . import conversion
from . import io
from .optimizer import AdadeltaState
from .tensor import (Tensor, matmul, transpose, add_bias, reshape, flatten,
                     conv2d, maxpool2d, relu, softmax, concat_channels,
                     dropout, cross_entropy)
from .tools import (MODALITIES, DimensionError, FormatError, ModalityError,
                    UsageError, make_rng, _shape_str)

LOGGER = logging.getLogger(__name__)

CLASS_NAMES = ('healthy', 'edema', 'non-enhancing', 'enhancing')
DEFAULT_KERNELS = (32, 32, 32, 64, 64, 64)
DEFAULT_HIDDEN = (64, 32)


@dataclass
class ClassifierParams:
    """Weights of the 2D CNN.

    Attributes:
        conv_stack (list): (kernels, bias) per conv layer, kernels are
                           C_out x C_in x 3 x 3.
        dense (list): (weights, bias) for fc1, fc2 and the output layer,
                      weights are out x in.
        dropout_p (float): Dropout probability after fc1 and fc2.
    """
    conv_stack: list
    dense: list
    dropout_p: float = 0.5

    @property
    def kernels(self):
        return tuple(kernels.shape[0] for kernels, _ in self.conv_stack)

    @property
    def hidden(self):
        return tuple(weights.shape[0] for weights, _ in self.dense[:-1])

    @property
    def classes(self):
        return self.dense[-1][0].shape[0]


@dataclass
class ModelParams:
    """All trainable weights: one conversion block per modality plus the
    shared classifier."""
    conversion_blocks: dict
    classifier: ClassifierParams
    omega: int = 33
    extra: dict = field(default_factory=dict)

    @property
    def slices(self):
        return self.conversion_blocks[MODALITIES[0]].slices


def _he_tensor(rng, shape, fan_in):
    return Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in),
                  requires_grad=True)


def _pooled_extent(omega, pools=2):
    for _ in range(pools):
        omega //= 2
    return omega


def init_model_params(omega=33, slices=7, reduction=2, bottleneck_channels=1,
                      classes=4, kernels=DEFAULT_KERNELS,
                      hidden=DEFAULT_HIDDEN, dropout=0.5, se_enabled=True,
                      rng=None):
    """Creates a model with He-normal weights and zero biases.

    Args:
        omega (int): (default: 33) In-plane patch extent.
        slices (int): (default: 7) Slices L per patch.
        reduction (int): (default: 2) Excitation reduction ratio r.
        bottleneck_channels (int): (default: 1) C_out per modality.
        classes (int): (default: 4) Number of classes c.
        kernels (tuple): (default: 32,32,32,64,64,64) Conv kernel counts,
                         split into two equal levels each closed by a pool.
        hidden (tuple): (default: 64,32) Hidden dense units.
        dropout (float): (default: 0.5) Dropout probability.
        se_enabled (bool): (default: True) Slice gate on/off (ablation).
        rng (np.random.Generator/int): Generator or seed.

    Returns:
        (ModelParams): The new model.

    Raises:
        UsageError: For an invalid architecture.
    """
    if classes < 2:
        raise UsageError(f'need at least 2 classes, got {classes}')
    if not kernels or len(kernels) % 2:
        raise UsageError('kernel counts must split into two equal levels, '
                         f'got {list(kernels)}')
    if _pooled_extent(omega) < 1:
        raise UsageError(f'omega={omega} is too small for two 2x2 pools')
    rng = make_rng(rng)
    blocks = {modality: conversion.init_conversion_params(
                  slices=slices, reduction=reduction,
                  out_channels=bottleneck_channels, se_enabled=se_enabled,
                  rng=rng)
              for modality in MODALITIES}

    conv_stack = []
    channels = bottleneck_channels * len(MODALITIES)
    for count in kernels:
        conv_stack.append((_he_tensor(rng, (count, channels, 3, 3),
                                      channels * 9),
                           Tensor(np.zeros(count), requires_grad=True)))
        channels = count

    dense = []
    features = channels * _pooled_extent(omega) ** 2
    for units in tuple(hidden) + (classes,):
        dense.append((_he_tensor(rng, (units, features), features),
                      Tensor(np.zeros(units), requires_grad=True)))
        features = units
    return ModelParams(conversion_blocks=blocks,
                       classifier=ClassifierParams(conv_stack, dense, dropout),
                       omega=omega)


def parameter_tensors(params):
    """Returns every trainable tensor keyed by a stable name.

    Names look like 'conversion/FLAIR/w1', 'conv/0/kernels', 'dense/2/bias'.
    """
    tensors = {}
    for modality in MODALITIES:
        block = params.conversion_blocks[modality]
        for name, tensor in conversion.parameter_tensors(block).items():
            tensors[f'conversion/{modality}/{name}'] = tensor
    for index, (kernels, bias) in enumerate(params.classifier.conv_stack):
        tensors[f'conv/{index}/kernels'] = kernels
        tensors[f'conv/{index}/bias'] = bias
    for index, (weights, bias) in enumerate(params.classifier.dense):
        tensors[f'dense/{index}/weights'] = weights
        tensors[f'dense/{index}/bias'] = bias
    return tensors


def hyperparameters(params):
    """Returns the architecture settings needed to rebuild `params`."""
    block = params.conversion_blocks[MODALITIES[0]]
    return {
        'omega': params.omega,
        'slices': block.slices,
        'reduction': block.reduction,
        'bottleneck_channels': block.out_channels,
        'classes': params.classifier.classes,
        'kernels': list(params.classifier.kernels),
        'hidden': list(params.classifier.hidden),
        'dropout': params.classifier.dropout_p,
        'se_enabled': block.se_enabled,
        }


def _check_patches(patches, params):
    missing = [modality for modality in MODALITIES if modality not in patches]
    if missing:
        raise ModalityError(f'missing modalities {missing}')
    first = patches[MODALITIES[0]]
    expected = (params.slices, params.omega, params.omega)
    for modality in MODALITIES:
        shape = patches[modality].shape
        if shape[-3:] != expected or shape[:-3] != first.shape[:-3] \
                or len(shape) not in (3, 4):
            raise DimensionError(f'{modality} patch {_shape_str(shape)} does '
                                 f'not match {_shape_str(expected)}')
    return first.ndim == 4


def _dense(x, weights, bias):
    return add_bias(matmul(x, transpose(weights)), bias)


def logits(patches, params, training=False, rng=None):
    """Pre-softmax scores. See #forward()."""
    batched = _check_patches(patches, params)
    maps = [conversion.convert(patches[modality],
                               params.conversion_blocks[modality])
            for modality in MODALITIES]
    features = concat_channels(maps)

    conv_stack = params.classifier.conv_stack
    level = len(conv_stack) // 2
    for index, (kernels, bias) in enumerate(conv_stack):
        features = relu(conv2d(features, kernels, bias, padding='same'))
        if (index + 1) % level == 0:
            features = maxpool2d(features)

    hidden = flatten(features, batched=True) if batched \
        else reshape(features, (1, features.size))
    dense = params.classifier.dense
    for weights, bias in dense[:-1]:
        hidden = relu(_dense(hidden, weights, bias))
        hidden = dropout(hidden, params.classifier.dropout_p, training, rng)
    scores = _dense(hidden, *dense[-1])
    return scores if batched else reshape(scores, (scores.size,))


def forward(patches, params, training=False, rng=None):
    """Class probabilities for the central voxel of each patch.

    Args:
        patches (dict): Modality name -> Tensor L x w x w (or N x L x w x w)
                        for FLAIR, T1, T1c and T2.
        params (ModelParams): Model weights.
        training (bool): (default: False) Apply dropout.
        rng (np.random.Generator): Dropout mask source, needed in training.

    Returns:
        (Tensor): c probabilities (or N x c).

    Raises:
        ModalityError: If a modality is missing.
        DimensionError: If a patch shape does not fit the model.
    """
    if training and rng is None:
        raise UsageError('forward in training mode needs an rng')
    return softmax(logits(patches, params, training, rng))


def loss(patches, target, params, rng):
    """Cross-entropy of the training-mode forward pass against the label of
    the central voxel (mean over a batch)."""
    return cross_entropy(forward(patches, params, training=True, rng=rng),
                         target)


def predict(patches, params):
    """Most probable class, lowest index on ties.

    Returns:
        (int/np.ndarray): A class index, or N indices for batched patches.
    """
    probs = forward(patches, params, training=False).data
    choice = np.argmax(probs, axis=-1)
    return int(choice) if probs.ndim == 1 else choice


def save_params(params, path, state=None, metadata=None):
    """Writes a checkpoint: model weights, optionally ADADELTA accumulators.

    Weights are stored as little-endian float32.

    Args:
        params (ModelParams): Model to save.
        path (str/pathlib.Path): Output file.
        state (optimizer.AdadeltaState): (default: None) Optimizer state to
                                         store for resuming.
        metadata (dict): (default: None) Extra key-value pairs (seed, ...).
    """
    arrays = {name: tensor.data
              for name, tensor in parameter_tensors(params).items()}
    meta = {'hyper.' + key: value
            for key, value in hyperparameters(params).items()}
    if state is not None:
        for name in state.sq_grad:
            arrays[f'adadelta/sq_grad/{name}'] = state.sq_grad[name]
            arrays[f'adadelta/sq_delta/{name}'] = state.sq_delta[name]
        meta.update({'adadelta.rho': state.rho,
                     'adadelta.epsilon': state.epsilon,
                     'adadelta.learning_rate': state.learning_rate,
                     'adadelta.steps': state.steps})
    meta.update(metadata or {})
    io.write_checkpoint(path, arrays, meta)
    LOGGER.info('Saved checkpoint %s (%d tensors)', path, len(arrays))


def _accumulator(arrays, path, kind, name, tensor):
    key = f'adadelta/{kind}/{name}'
    if key not in arrays:
        raise FormatError(f'{path}: missing field {key}')
    if arrays[key].shape != tensor.shape:
        raise FormatError(f'{path}: tensor {key} has shape '
                          f'{_shape_str(arrays[key].shape)}, expected '
                          f'{_shape_str(tensor.shape)}')
    return np.asarray(arrays[key], dtype=tensor.dtype)


def load_checkpoint(path):
    """Reads a checkpoint written by #save_params().

    Returns:
        tuple: (ModelParams, AdadeltaState or None, metadata dict)

    Raises:
        FormatError: If the file is missing, corrupt or incomplete. The
                     message names the offending field.
    """
    arrays, meta = io.read_checkpoint(path)
    try:
        hyper = {key[len('hyper.'):]: meta[key]
                 for key in meta if key.startswith('hyper.')}
        params = init_model_params(
            omega=int(hyper['omega']), slices=int(hyper['slices']),
            reduction=int(hyper['reduction']),
            bottleneck_channels=int(hyper['bottleneck_channels']),
            classes=int(hyper['classes']), kernels=tuple(hyper['kernels']),
            hidden=tuple(hyper['hidden']), dropout=float(hyper['dropout']),
            se_enabled=bool(hyper['se_enabled']), rng=0)
    except KeyError as error:
        raise FormatError(f'{path}: missing field hyper.{error.args[0]}')
    except (TypeError, ValueError) as error:
        raise FormatError(f'{path}: bad hyperparameters: {error}')

    tensors = parameter_tensors(params)
    for name, tensor in tensors.items():
        if name not in arrays:
            raise FormatError(f'{path}: checkpoint lacks tensor {name}')
        if arrays[name].shape != tensor.shape:
            raise FormatError(f'{path}: tensor {name} has shape '
                              f'{_shape_str(arrays[name].shape)}, expected '
                              f'{_shape_str(tensor.shape)}')
        tensor.data = np.asarray(arrays[name], dtype=tensor.dtype)

    state = None
    if any(key.startswith('adadelta.') for key in meta):
        for key in ('adadelta.rho', 'adadelta.epsilon',
                    'adadelta.learning_rate', 'adadelta.steps'):
            if key not in meta:
                raise FormatError(f'{path}: missing field {key}')
        state = AdadeltaState(
            sq_grad={name: _accumulator(arrays, path, 'sq_grad', name, tensor)
                     for name, tensor in tensors.items()},
            sq_delta={name: _accumulator(arrays, path, 'sq_delta', name,
                                         tensor)
                      for name, tensor in tensors.items()},
            rho=float(meta['adadelta.rho']),
            epsilon=float(meta['adadelta.epsilon']),
            learning_rate=float(meta['adadelta.learning_rate']),
            steps=int(meta['adadelta.steps']))
    extra = {key: value for key, value in meta.items()
             if not key.startswith(('hyper.', 'adadelta.'))}
    params.extra = extra
    return params, state, extra


def load_params(path):
    """Reads the model weights of a checkpoint. See #load_checkpoint()."""
    return load_checkpoint(path)[0]
