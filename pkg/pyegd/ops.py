"""
Forward and backward kernels of the layers the four networks are built from.

Every forward function returns its output together with the cache its
backward counterpart needs. Arrays are batch-first: ``(N, C, L)`` for
convolutional inputs, ``(N, T, D)`` for sequences, ``(N, D)`` for vectors.
"""

from __future__ import annotations

from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, NumericalError, ShapeError

__all__ = (
    'PROBABILITY_CLAMP',
    'BN_EPSILON',
    'BN_MOMENTUM',
    'check_finite',
    'conv1d_forward',
    'conv1d_backward',
    'maxpool1d_forward',
    'maxpool1d_backward',
    'batchnorm_forward',
    'batchnorm_backward',
    'dropout_forward',
    'dropout_backward',
    'dense_forward',
    'dense_backward',
    'relu_forward',
    'relu_backward',
    'sigmoid_forward',
    'sigmoid_backward',
    'lstm_forward',
    'lstm_backward',
    'bce_loss',
)

PROBABILITY_CLAMP = 1e-7
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1

Cache = Dict[str, Any]


def check_finite(array: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f'{op} produced NaN or Inf')
    return array


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """
    Valid cross-correlation with stride 1.

    ``x`` is ``(N, C_in, L)``, ``kernels`` is ``(C_out, C_in, k)``; the output is
    ``(N, C_out, L - k + 1)``.
    """
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f'conv1d cannot combine input {x.shape} with kernels {kernels.shape}')
    k = kernels.shape[2]
    if x.shape[2] < k:
        raise ShapeError(f'conv1d input length {x.shape[2]} is shorter than the kernel ({k})')

    columns = sliding_window_view(x, k, axis=2)
    y = np.einsum('nclk,ock->nol', columns, kernels) + bias[None, :, None]
    return check_finite(y, 'conv1d'), {'columns': columns, 'kernels': kernels, 'length': x.shape[2]}


def conv1d_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    columns, kernels = cache['columns'], cache['kernels']
    k = kernels.shape[2]
    out_length = dy.shape[2]

    dkernels = np.einsum('nol,nclk->ock', dy, columns)
    dbias = dy.sum(axis=(0, 2))
    dx = np.zeros((dy.shape[0], kernels.shape[1], cache['length']))
    for j in range(k):
        dx[:, :, j:j + out_length] += np.einsum('nol,oc->ncl', dy, kernels[:, :, j])
    return dx, dkernels, dbias


def maxpool1d_forward(x: np.ndarray, size: int = 2) -> Tuple[np.ndarray, Cache]:
    """
    Non-overlapping max pooling; a trailing remainder shorter than ``size`` is dropped.
    Ties route the gradient to the earliest index.
    """
    n, c, length = x.shape
    if length < size:
        raise ShapeError(f'maxpool input length {length} is shorter than the pool ({size})')
    pooled = length // size
    blocks = x[:, :, :pooled * size].reshape(n, c, pooled, size)
    argmax = blocks.argmax(axis=3)
    y = np.take_along_axis(blocks, argmax[..., None], axis=3)[..., 0]
    return y, {'argmax': argmax, 'shape': x.shape, 'size': size}


def maxpool1d_backward(dy: np.ndarray, cache: Cache) -> np.ndarray:
    n, c, length = cache['shape']
    size = cache['size']
    pooled = dy.shape[2]
    mask = np.arange(size)[None, None, None, :] == cache['argmax'][..., None]
    dx = np.zeros((n, c, length))
    dx[:, :, :pooled * size] = (mask * dy[..., None]).reshape(n, c, pooled * size)
    return dx


def _bn_axes(x: np.ndarray) -> Tuple[int, ...]:
    return (0, 2) if x.ndim == 3 else (0,)


def _bn_view(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    return v[None, :, None] if x.ndim == 3 else v[None, :]


def batchnorm_forward(
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        *,
        training: bool,
        momentum: float = BN_MOMENTUM,
        eps: float = BN_EPSILON
) -> Tuple[np.ndarray, Cache]:
    """
    Per-channel batch normalization over ``(N, C)`` or ``(N, C, L)`` inputs.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place with ``momentum``; in eval mode the
    running statistics are used.
    """
    axes = _bn_axes(x)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - _bn_view(mean, x)) * _bn_view(inv_std, x)
    y = _bn_view(gamma, x) * xhat + _bn_view(beta, x)
    return check_finite(y, 'batchnorm1d'), {'xhat': xhat, 'inv_std': inv_std, 'gamma': gamma, 'training': training}


def batchnorm_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv_std, gamma = cache['xhat'], cache['inv_std'], cache['gamma']
    axes = _bn_axes(dy)
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * _bn_view(gamma, dy)

    if not cache['training']:
        return dxhat * _bn_view(inv_std, dy), dgamma, dbeta

    m = dy.size // dy.shape[1]
    dx = (
        _bn_view(inv_std / m, dy)
        * (m * dxhat - _bn_view(dxhat.sum(axis=axes), dy) - xhat * _bn_view((dxhat * xhat).sum(axis=axes), dy))
    )
    return dx, dgamma, dbeta


def dropout_forward(
        x: np.ndarray,
        p: float,
        rng: Optional[np.random.Generator],
        *,
        training: bool
) -> Tuple[np.ndarray, Cache]:
    """Inverted dropout: kept units are scaled by ``1 / (1 - p)``; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f'dropout probability must lie in [0, 1), got {p}')
    if not training or p == 0.0:
        return x, {'mask': None}
    if rng is None:
        raise ConfigError('training-mode dropout needs a random generator')
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, {'mask': mask}


def dropout_backward(dy: np.ndarray, cache: Cache) -> np.ndarray:
    mask = cache['mask']
    return dy if mask is None else dy * mask


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """Affine map ``x @ W.T + b`` with ``W`` of shape ``(m, n)``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError(f'dense cannot combine input {x.shape}, weight {weight.shape} and bias {bias.shape}')
    y = x @ weight.T + bias
    return check_finite(y, 'dense'), {'x': x, 'weight': weight}


def dense_backward(dy: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return dy @ cache['weight'], dy.T @ cache['x'], dy.sum(axis=0)


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    return np.maximum(x, 0.0), {'positive': x > 0}


def relu_backward(dy: np.ndarray, cache: Cache) -> np.ndarray:
    return dy * cache['positive']


def sigmoid_forward(x: np.ndarray) -> Tuple[np.ndarray, Cache]:
    y = expit(x)
    return y, {'y': y}


def sigmoid_backward(dy: np.ndarray, cache: Cache) -> np.ndarray:
    y = cache['y']
    return dy * y * (1.0 - y)


def lstm_forward(
        x: np.ndarray,
        w_input: np.ndarray,
        w_hidden: np.ndarray,
        bias: np.ndarray
) -> Tuple[np.ndarray, Cache]:
    """
    One LSTM layer from a zero initial state.

    Gate rows of the weights are ordered input, forget, output, candidate.
    ``x`` is ``(N, T, D)``, ``w_input`` ``(4H, D)``, ``w_hidden`` ``(4H, H)``;
    returns every hidden state, ``(N, T, H)``.
    """
    if x.ndim != 3 or x.shape[1] == 0:
        raise ShapeError(f'lstm needs a non-empty (N, T, D) sequence, got {x.shape}')
    hidden = w_hidden.shape[1]
    if w_input.shape != (4 * hidden, x.shape[2]) or bias.shape != (4 * hidden,):
        raise ShapeError(f'lstm weights {w_input.shape} do not fit input {x.shape} and hidden size {hidden}')

    n, steps, _ = x.shape
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    states = np.zeros((n, steps, hidden))
    gates = np.zeros((n, steps, 4 * hidden))
    cells = np.zeros((n, steps + 1, hidden))
    projected = x @ w_input.T + bias

    for t in range(steps):
        z = projected[:, t] + h @ w_hidden.T
        g = np.empty_like(z)
        g[:, :3 * hidden] = expit(z[:, :3 * hidden])
        g[:, 3 * hidden:] = np.tanh(z[:, 3 * hidden:])
        i, f, o, candidate = np.split(g, 4, axis=1)
        c = f * c + i * candidate
        h = o * np.tanh(c)
        gates[:, t] = g
        cells[:, t + 1] = c
        states[:, t] = h

    check_finite(states, 'lstm')
    return states, {'x': x, 'w_input': w_input, 'w_hidden': w_hidden, 'gates': gates, 'cells': cells, 'states': states}


def lstm_backward(dstates: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagation through time; returns ``(dx, dw_input, dw_hidden, dbias)``."""
    x, w_input, w_hidden = cache['x'], cache['w_input'], cache['w_hidden']
    gates, cells, states = cache['gates'], cache['cells'], cache['states']
    n, steps, hidden = states.shape

    dz = np.zeros((n, steps, 4 * hidden))
    dh_next = np.zeros((n, hidden))
    dc_next = np.zeros((n, hidden))

    for t in reversed(range(steps)):
        i, f, o, candidate = np.split(gates[:, t], 4, axis=1)
        c, c_prev = cells[:, t + 1], cells[:, t]
        tanh_c = np.tanh(c)

        dh = dstates[:, t] + dh_next
        dc = dh * o * (1.0 - tanh_c ** 2) + dc_next
        dz[:, t] = np.concatenate([
            dc * candidate * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tanh_c * o * (1.0 - o),
            dc * i * (1.0 - candidate ** 2),
        ], axis=1)
        dc_next = dc * f
        dh_next = dz[:, t] @ w_hidden

    previous = np.concatenate([np.zeros((n, 1, hidden)), states[:, :-1]], axis=1)
    dx = dz @ w_input
    dw_input = np.einsum('ntg,ntd->gd', dz, x)
    dw_hidden = np.einsum('ntg,nth->gh', dz, previous)
    dbias = dz.sum(axis=(0, 1))
    return dx, dw_input, dw_hidden, dbias


def bce_loss(p: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean binary cross entropy of probabilities ``p`` against labels ``y``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]``; the returned gradient with respect to
    ``p`` is zero where the clamp is active.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    clamped = np.clip(p, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    losses = -(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped))
    n = max(p.size, 1)
    grad = (-(y / clamped) + (1.0 - y) / (1.0 - clamped)) / n
    grad = np.where(clamped == p, grad, 0.0)
    return float(losses.mean()), grad
