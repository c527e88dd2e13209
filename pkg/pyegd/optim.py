from __future__ import annotations

from typing import Dict

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import ParameterSet

__all__ = ('AdamState', 'adam_step')


class AdamState:
    """
    Moment accumulators of the Adam optimizer for one :class:`ParameterSet`.

    Attributes
    ----------
    lr : :class:`float`
        The learning rate.
    beta1 : :class:`float`
    beta2 : :class:`float`
    eps : :class:`float`
    t : :class:`int`
        Steps taken so far.
    m : Dict[:class:`str`, :class:`numpy.ndarray`]
        First moments, keyed by parameter name.
    v : Dict[:class:`str`, :class:`numpy.ndarray`]
        Second moments, keyed by parameter name.
    """

    __slots__ = ('lr', 'beta1', 'beta2', 'eps', 't', 'm', 'v')

    def __init__(
            self,
            params: ParameterSet,
            *,
            lr: float = 1e-3,
            beta1: float = 0.9,
            beta2: float = 0.999,
            eps: float = 1e-8
    ):
        if lr <= 0:
            raise ConfigError(f'learning rate must be positive, got {lr}')
        self.lr: float = lr
        self.beta1: float = beta1
        self.beta2: float = beta2
        self.eps: float = eps
        self.t: int = 0
        self.m: Dict[str, np.ndarray] = {name: np.zeros(p.shape) for name, p in params.trainable()}
        self.v: Dict[str, np.ndarray] = {name: np.zeros(p.shape) for name, p in params.trainable()}

    def __repr__(self):
        return f'<AdamState lr={self.lr} t={self.t}>'


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """
    Applies one bias-corrected Adam update to the trainable parameters in place,
    using the gradients accumulated in ``params``.

    Raises
    ------
    :class:`ShapeError`
        A gradient or moment does not match its parameter.
    """
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t

    for name, parameter in params.trainable():
        m, v = state.m.get(name), state.v.get(name)
        if m is None or m.shape != parameter.shape or parameter.grad.shape != parameter.shape:
            raise ShapeError(f'{name}: optimizer state does not match parameter shape {parameter.shape}')

        grad = parameter.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        parameter.value -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
