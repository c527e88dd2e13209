from __future__ import annotations

from collections import OrderedDict
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .errors import ConfigError, ModeError, ShapeError

__all__ = (
    'Parameter',
    'ParameterSet',
    'ForwardContext',
    'Layer',
    'Conv1d',
    'MaxPool1d',
    'BatchNorm1d',
    'Dropout',
    'Dense',
    'ReLU',
    'Sigmoid',
    'LSTM',
    'Flatten',
    'Transpose',
    'Sequential',
)

Shape = Tuple[int, ...]


class Parameter:
    """
    One named tensor of a network.

    Attributes
    ----------
    value : :class:`numpy.ndarray`
        The current value, always held in float64.
    grad : :class:`numpy.ndarray`
        The accumulated gradient, same shape as ``value``.
    trainable : :class:`bool`
        ``False`` for buffers such as batch-norm running statistics.
    """

    __slots__ = ('value', 'grad', 'trainable')

    def __init__(self, value: np.ndarray, *, trainable: bool = True):
        self.value: np.ndarray = np.array(value, dtype=np.float64)
        self.grad: np.ndarray = np.zeros_like(self.value)
        self.trainable: bool = trainable

    @property
    def shape(self) -> Shape:
        return self.value.shape

    def __repr__(self):
        return f'<Parameter shape={self.shape} trainable={self.trainable}>'


class ParameterSet:
    """
    Named parameters and buffers of a network, in declared layer order.

    The same :class:`Parameter` objects are referenced by the layers, so
    updating a value here is seen by the next forward pass.
    """

    __slots__ = ('_items',)

    def __init__(self, items: Optional[Sequence[Tuple[str, Parameter]]] = None):
        self._items: Dict[str, Parameter] = OrderedDict()
        for name, parameter in items or ():
            self.add(name, parameter)

    def add(self, name: str, parameter: Parameter) -> Parameter:
        if name in self._items:
            raise ConfigError(f'duplicate parameter name {name!r}')
        self._items[name] = parameter
        return parameter

    def __getitem__(self, name: str) -> Parameter:
        return self._items[name]

    def __contains__(self, name: object) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def items(self) -> List[Tuple[str, Parameter]]:
        return list(self._items.items())

    def trainable(self) -> List[Tuple[str, Parameter]]:
        return [(name, p) for name, p in self._items.items() if p.trainable]

    def zero_grad(self) -> None:
        for parameter in self._items.values():
            parameter.grad[...] = 0.0

    def manifest(self) -> List[Tuple[str, Shape]]:
        return [(name, p.shape) for name, p in self._items.items()]

    def state(self) -> Dict[str, np.ndarray]:
        """Copies of every value, keyed by name."""
        return {name: p.value.copy() for name, p in self._items.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        missing = [name for name in self._items if name not in state]
        if missing:
            raise ShapeError(f'state is missing {", ".join(missing)}')
        for name, parameter in self._items.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != parameter.shape:
                raise ShapeError(f'{name}: expected shape {parameter.shape}, got {value.shape}')
            parameter.value[...] = value

    def round_to_float32(self) -> None:
        for parameter in self._items.values():
            parameter.value[...] = parameter.value.astype(np.float32).astype(np.float64)

    def count(self, trainable_only: bool = True) -> int:
        return sum(p.value.size for p in self._items.values() if p.trainable or not trainable_only)

    def __repr__(self):
        return f'<ParameterSet parameters={len(self)} values={self.count(False)}>'


class ForwardContext:
    """
    The mode of one forward pass.

    Attributes
    ----------
    training : :class:`bool`
        Training mode: batch statistics, active dropout.
    rng : Optional[:class:`numpy.random.Generator`]
        Drives dropout masks; required in training mode when dropout is active.
    """

    __slots__ = ('training', 'rng')

    def __init__(self, *, training: bool = False, rng: Optional[np.random.Generator] = None):
        self.training: bool = training
        self.rng: Optional[np.random.Generator] = rng

    def __repr__(self):
        return f'<ForwardContext training={self.training}>'


EVAL = ForwardContext(training=False)


def _uniform(rng: np.random.Generator, bound: float, shape: Shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """
    Base class of the network layers.

    ``forward`` takes a batch-first array and returns the output with the
    cache its ``backward`` needs; ``backward`` accumulates parameter gradients
    and returns the gradient with respect to the input.
    """

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return []

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache: Any) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def __repr__(self):
        return f'<{type(self).__name__}>'


class Conv1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_channels * kernel_size)
        self.kernel_size = kernel_size
        self.weight = Parameter(_uniform(rng, bound, (out_channels, in_channels, kernel_size)))
        self.bias = Parameter(_uniform(rng, bound, (out_channels,)))

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return [('weight', self.weight), ('bias', self.bias)]

    def forward(self, x, ctx):
        return ops.conv1d_forward(x, self.weight.value, self.bias.value)

    def backward(self, dy, cache):
        dx, dweight, dbias = ops.conv1d_backward(dy, cache)
        self.weight.grad += dweight
        self.bias.grad += dbias
        return dx

    def output_shape(self, shape):
        channels, length = shape
        if channels != self.weight.shape[1] or length < self.kernel_size:
            raise ShapeError(f'conv1d {self.weight.shape} cannot take input {shape}')
        return self.weight.shape[0], length - self.kernel_size + 1

    def __repr__(self):
        return f'<Conv1d weight={self.weight.shape}>'


class MaxPool1d(Layer):
    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x, ctx):
        return ops.maxpool1d_forward(x, self.size)

    def backward(self, dy, cache):
        return ops.maxpool1d_backward(dy, cache)

    def output_shape(self, shape):
        channels, length = shape
        if length < self.size:
            raise ShapeError(f'maxpool of size {self.size} cannot take input {shape}')
        return channels, length // self.size

    def __repr__(self):
        return f'<MaxPool1d size={self.size}>'


class BatchNorm1d(Layer):
    """
    Batch normalization over ``(N, C)`` or ``(N, C, L)`` inputs.

    The running statistics and the count of training batches seen are
    buffers; evaluating before any training batch raises :class:`ModeError`.
    """

    def __init__(self, channels: int):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = Parameter(np.zeros(channels), trainable=False)
        self.running_var = Parameter(np.ones(channels), trainable=False)
        self.batches_tracked = Parameter(np.zeros(1), trainable=False)

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return [
            ('gamma', self.gamma),
            ('beta', self.beta),
            ('running_mean', self.running_mean),
            ('running_var', self.running_var),
            ('batches_tracked', self.batches_tracked),
        ]

    def forward(self, x, ctx):
        if not ctx.training and self.batches_tracked.value[0] == 0:
            raise ModeError('batch norm evaluated before any training update')
        y, cache = ops.batchnorm_forward(
            x, self.gamma.value, self.beta.value, self.running_mean.value, self.running_var.value,
            training=ctx.training
        )
        if ctx.training:
            self.batches_tracked.value += 1
        return y, cache

    def backward(self, dy, cache):
        dx, dgamma, dbeta = ops.batchnorm_backward(dy, cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx

    def output_shape(self, shape):
        if shape[0] != self.gamma.shape[0]:
            raise ShapeError(f'batch norm over {self.gamma.shape[0]} channels cannot take input {shape}')
        return shape

    def __repr__(self):
        return f'<BatchNorm1d channels={self.gamma.shape[0]}>'


class Dropout(Layer):
    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f'dropout probability must lie in [0, 1), got {p}')
        self.p = p

    def forward(self, x, ctx):
        return ops.dropout_forward(x, self.p, ctx.rng, training=ctx.training)

    def backward(self, dy, cache):
        return ops.dropout_backward(dy, cache)

    def __repr__(self):
        return f'<Dropout p={self.p}>'


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features)))
        self.bias = Parameter(_uniform(rng, bound, (out_features,)))

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return [('weight', self.weight), ('bias', self.bias)]

    def forward(self, x, ctx):
        return ops.dense_forward(x, self.weight.value, self.bias.value)

    def backward(self, dy, cache):
        dx, dweight, dbias = ops.dense_backward(dy, cache)
        self.weight.grad += dweight
        self.bias.grad += dbias
        return dx

    def output_shape(self, shape):
        if shape != (self.weight.shape[1],):
            raise ShapeError(f'dense {self.weight.shape} cannot take input {shape}')
        return (self.weight.shape[0],)

    def __repr__(self):
        return f'<Dense weight={self.weight.shape}>'


class ReLU(Layer):
    def forward(self, x, ctx):
        return ops.relu_forward(x)

    def backward(self, dy, cache):
        return ops.relu_backward(dy, cache)


class Sigmoid(Layer):
    def forward(self, x, ctx):
        return ops.sigmoid_forward(x)

    def backward(self, dy, cache):
        return ops.sigmoid_backward(dy, cache)


class LSTM(Layer):
    """
    One LSTM layer over ``(N, T, D)`` inputs returning all hidden states.

    Weights are drawn from ``U(-1/sqrt(H), 1/sqrt(H))``; the forget gate bias
    starts at +1.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden_size)
        self.hidden_size = hidden_size
        self.w_input = Parameter(_uniform(rng, bound, (4 * hidden_size, input_size)))
        self.w_hidden = Parameter(_uniform(rng, bound, (4 * hidden_size, hidden_size)))
        bias = _uniform(rng, bound, (4 * hidden_size,))
        bias[hidden_size:2 * hidden_size] += 1.0
        self.bias = Parameter(bias)

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return [('w_input', self.w_input), ('w_hidden', self.w_hidden), ('bias', self.bias)]

    def forward(self, x, ctx):
        return ops.lstm_forward(x, self.w_input.value, self.w_hidden.value, self.bias.value)

    def backward(self, dy, cache):
        dx, dw_input, dw_hidden, dbias = ops.lstm_backward(dy, cache)
        self.w_input.grad += dw_input
        self.w_hidden.grad += dw_hidden
        self.bias.grad += dbias
        return dx

    def output_shape(self, shape):
        steps, features = shape
        if features != self.w_input.shape[1] or steps < 1:
            raise ShapeError(f'lstm over {self.w_input.shape[1]} features cannot take input {shape}')
        return steps, self.hidden_size

    def __repr__(self):
        return f'<LSTM input={self.w_input.shape[1]} hidden={self.hidden_size}>'


class Flatten(Layer):
    def forward(self, x, ctx):
        return x.reshape(len(x), -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Transpose(Layer):
    """Swaps the two non-batch axes, turning ``(N, C, L)`` windows into ``(N, L, C)`` sequences."""

    def forward(self, x, ctx):
        return np.ascontiguousarray(x.transpose(0, 2, 1)), None

    def backward(self, dy, cache):
        return np.ascontiguousarray(dy.transpose(0, 2, 1))

    def output_shape(self, shape):
        return shape[1], shape[0]


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        self.layers: List[Layer] = list(layers)

    def parameters(self) -> List[Tuple[str, Parameter]]:
        return [
            (f'{index}.{name}', parameter)
            for index, layer in enumerate(self.layers)
            for name, parameter in layer.parameters()
        ]

    def forward(self, x, ctx):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, ctx)
            caches.append(cache)
        return x, caches

    def backward(self, dy, cache):
        for layer, layer_cache in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(dy, layer_cache)
        return dy

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def __repr__(self):
        return f'<Sequential layers={len(self.layers)}>'
