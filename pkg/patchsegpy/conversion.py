"""### 3D to 2D patch conversion

Calibrates the L slices of a 3D patch with a squeeze-and-excitation gate and
collapses them into a 2D feature map with a 1x1 bottleneck convolution.

squeeze: z_l = mean over the w x w slice x_l
excite: u = sigmoid(W2 relu(W1 z)), W1 is h x L, W2 is L x h, h = max(1, L//r)
calibrate: x'_l = u_l x_l
convert: x'' = relu(conv1x1(x') + bias)

Each modality owns its own `ConversionParams`.
"""
__all__ = [
    'ConversionParams',
    'CalibratedPatch',
    'init_conversion_params',
    'parameter_tensors',
    'squeeze',
    'excite',
    'calibrate',
    'convert',
    ]

from dataclasses import dataclass
import numpy as np
from .tensor import (Tensor, matmul, transpose, reshape, relu, sigmoid,
                     conv2d, slice_mean, scale_slices)
from .tools import DimensionError, UsageError, make_rng, _shape_str


@dataclass
class ConversionParams:
    """Trainable weights of one conversion block.

    Attributes:
        w1 (Tensor): h x L excitation contraction, no bias.
        w2 (Tensor): L x h excitation expansion, no bias.
        bottleneck_kernels (Tensor): C_out x L x 1 x 1.
        bottleneck_bias (Tensor): C_out.
        reduction (int): Reduction ratio r.
        se_enabled (bool): When False the slice gate is bypassed (u = 1).
    """
    w1: Tensor
    w2: Tensor
    bottleneck_kernels: Tensor
    bottleneck_bias: Tensor
    reduction: int = 2
    se_enabled: bool = True

    @property
    def slices(self):
        return self.w1.shape[1]

    @property
    def hidden(self):
        return self.w1.shape[0]

    @property
    def out_channels(self):
        return self.bottleneck_kernels.shape[0]


@dataclass
class CalibratedPatch:
    """Calibrated patch x' and the gate u that produced it."""
    x_prime: Tensor
    u: Tensor


def _he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def init_conversion_params(slices=7, reduction=2, out_channels=1,
                           se_enabled=True, rng=None):
    """Creates a conversion block with He-normal weights and zero bias.

    Args:
        slices (int): (default: 7) Number of slices L in a patch.
        reduction (int): (default: 2) Reduction ratio r, h = max(1, L//r).
        out_channels (int): (default: 1) Bottleneck output channels C_out.
        se_enabled (bool): (default: True) Use the slice gate.
        rng (np.random.Generator/int): Generator or seed.

    Returns:
        (ConversionParams): The new parameters.

    Raises:
        UsageError: For non-positive sizes.
    """
    if slices < 1 or reduction < 1 or out_channels < 1:
        raise UsageError('slices, reduction and out_channels must be >= 1, '
                         f'got {slices}, {reduction}, {out_channels}')
    rng = make_rng(rng)
    hidden = max(1, slices // reduction)
    return ConversionParams(
        w1=Tensor(_he_normal(rng, (hidden, slices), slices),
                  requires_grad=True),
        w2=Tensor(_he_normal(rng, (slices, hidden), hidden),
                  requires_grad=True),
        bottleneck_kernels=Tensor(
            _he_normal(rng, (out_channels, slices, 1, 1), slices),
            requires_grad=True),
        bottleneck_bias=Tensor(np.zeros(out_channels), requires_grad=True),
        reduction=reduction,
        se_enabled=se_enabled,
        )


def parameter_tensors(params):
    """Returns the trainable tensors of a block by name."""
    return {
        'w1': params.w1,
        'w2': params.w2,
        'bottleneck_kernels': params.bottleneck_kernels,
        'bottleneck_bias': params.bottleneck_bias,
        }


def squeeze(x):
    """Per-slice spatial average, z_l = (1/w^2) sum_ij x_l(i, j)."""
    return slice_mean(x)


def excite(z, params):
    """Slice gate u = sigmoid(W2 relu(W1 z)), every entry in (0, 1).

    Args:
        z (Tensor): L squeezed values (or N x L).
        params (ConversionParams): Block weights.

    Raises:
        DimensionError: If z does not have L entries.
    """
    if z.ndim not in (1, 2) or z.shape[-1] != params.slices:
        raise DimensionError(f'excite: z {_shape_str(z.shape)} does not fit '
                             f'{params.slices} slices')
    rows = reshape(z, (1, params.slices)) if z.ndim == 1 else z
    hidden = relu(matmul(rows, transpose(params.w1)))
    gate = sigmoid(matmul(hidden, transpose(params.w2)))
    return reshape(gate, z.shape) if z.ndim == 1 else gate


def calibrate(x, params):
    """Scales each slice of x by its gate value.

    With `se_enabled` False the gate is all ones and x' is x itself.

    Returns:
        (CalibratedPatch): x' and u.
    """
    if not params.se_enabled:
        ones = Tensor(np.ones(x.shape[:-2], dtype=x.dtype))
        return CalibratedPatch(x_prime=x, u=ones)
    gate = excite(squeeze(x), params)
    return CalibratedPatch(x_prime=scale_slices(x, gate), u=gate)


def convert(x, params):
    """3D patch (L x w x w) to C_out x w x w feature map.

    Examples:
        ```python
        params = init_conversion_params(slices=7, rng=0)
        x2d = convert(Tensor(np.ones((7, 33, 33))), params)  # 1 x 33 x 33
        ```
    """
    calibrated = calibrate(x, params)
    return relu(conv2d(calibrated.x_prime, params.bottleneck_kernels,
                       params.bottleneck_bias, padding='same'))
