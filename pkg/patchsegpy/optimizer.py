"""### ADADELTA

Per coordinate, with decay rho and fuzz epsilon:

    E[g^2]  <- rho E[g^2] + (1 - rho) g^2
    dx      =  -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
    x       <- x + lr dx

Parameters are addressed by name, either a `ModelParams` (names from
`classifier.parameter_tensors`) or any dict of name -> Tensor.
"""
__all__ = [
    'AdadeltaState',
    'init_state',
    'gradient_set',
    'step',
    'reset',
    ]

from collections.abc import Mapping
from dataclasses import dataclass, field
import numpy as np
from .tools import DimensionError, UsageError, _shape_str


@dataclass
class AdadeltaState:
    """Accumulators E[g^2] and E[dx^2] per parameter name.

    Attributes:
        sq_grad (dict): name -> E[g^2] array.
        sq_delta (dict): name -> E[dx^2] array.
        rho (float): (default: 0.95) Decay rate.
        epsilon (float): (default: 1e-6) Fuzz term.
        learning_rate (float): (default: 1.0) Multiplies dx.
        steps (int): Number of updates applied.
    """
    sq_grad: dict = field(default_factory=dict)
    sq_delta: dict = field(default_factory=dict)
    rho: float = 0.95
    epsilon: float = 1e-6
    learning_rate: float = 1.0
    steps: int = 0


def _tensors(params):
    if isinstance(params, Mapping):
        return params
    from .classifier import parameter_tensors
    return parameter_tensors(params)


def init_state(params, rho=0.95, epsilon=1e-6, learning_rate=1.0):
    """Fresh state with zero accumulators shaped like `params`.

    Examples:
        ```python
        state = init_state({'x': Tensor([1.0], requires_grad=True)})
        ```
    """
    tensors = _tensors(params)
    return AdadeltaState(
        sq_grad={name: np.zeros_like(tensor.data)
                 for name, tensor in tensors.items()},
        sq_delta={name: np.zeros_like(tensor.data)
                  for name, tensor in tensors.items()},
        rho=rho, epsilon=epsilon, learning_rate=learning_rate)


def gradient_set(params):
    """Collects name -> gradient after `backward()`.

    Tensors the loss does not reach get a zero gradient.
    """
    return {name: (np.zeros_like(tensor.data) if tensor.grad is None
                   else tensor.grad)
            for name, tensor in _tensors(params).items()}


def step(params, grads, state):
    """Applies one ADADELTA update in place.

    Args:
        params (ModelParams/dict): Parameters to update.
        grads (dict): name -> gradient array for every parameter.
        state (AdadeltaState): Accumulators, updated in place.

    Raises:
        UsageError: If a parameter has no gradient or no accumulator.
        DimensionError: If a gradient or accumulator shape differs from its
                        parameter.
    """
    tensors = _tensors(params)
    rho, epsilon = state.rho, state.epsilon
    for name, tensor in tensors.items():
        if name not in grads:
            raise UsageError(f'adadelta: no gradient for {name}')
        if name not in state.sq_grad:
            raise UsageError(f'adadelta: no accumulator for {name}')
        grad = np.asarray(grads[name], dtype=tensor.dtype)
        sq_grad, sq_delta = state.sq_grad[name], state.sq_delta[name]
        if grad.shape != tensor.shape or sq_grad.shape != tensor.shape:
            raise DimensionError(
                f'adadelta: {name} is {_shape_str(tensor.shape)} but gradient '
                f'is {_shape_str(grad.shape)} and state '
                f'{_shape_str(sq_grad.shape)}')

        sq_grad *= rho
        sq_grad += (1 - rho) * grad * grad
        delta = -np.sqrt(sq_delta + epsilon) / np.sqrt(sq_grad + epsilon) * grad
        sq_delta *= rho
        sq_delta += (1 - rho) * delta * delta
        tensor.data += state.learning_rate * delta
    state.steps += 1


def reset(state):
    """Zeroes both accumulators (and the step count)."""
    for name in state.sq_grad:
        state.sq_grad[name][...] = 0
        state.sq_delta[name][...] = 0
    state.steps = 0
