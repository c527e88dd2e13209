"""
Central finite-difference verification of the analytic gradients.

ReLU, max pooling and the Siamese absolute difference are piecewise smooth.
A coordinate whose perturbation flips any of their activation patterns is
not comparable with a central difference, so it is counted as skipped
instead of checked.
"""

from __future__ import annotations

import logging
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .layers import (
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    ForwardContext,
    Layer,
    LSTM,
    MaxPool1d,
    ReLU,
    Sigmoid,
)
from .networks import Architecture, ModelConfig, Network, build_model
from .ops import bce_loss

__all__ = (
    'GRADCHECK_TOLERANCE',
    'GradCheckReport',
    'relative_error',
    'compare_gradients',
    'check_layer',
    'grad_check',
    'small_config',
    'run_gradient_suite',
)

log = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4

Objective = Callable[[], Tuple[float, bytes]]


class GradCheckReport:
    """
    The outcome of one gradient check.

    Attributes
    ----------
    name : :class:`str`
    max_relative_error : :class:`float`
    worst : :class:`str`
        The tensor holding the worst coordinate.
    checked : :class:`int`
        Coordinates compared.
    skipped : :class:`int`
        Coordinates whose perturbation crossed a kink.
    tolerance : :class:`float`
    """

    __slots__ = ('name', 'max_relative_error', 'worst', 'checked', 'skipped', 'tolerance')

    def __init__(
            self,
            *,
            name: str,
            max_relative_error: float,
            worst: str,
            checked: int,
            skipped: int = 0,
            tolerance: float = GRADCHECK_TOLERANCE
    ):
        self.name: str = name
        self.max_relative_error: float = max_relative_error
        self.worst: str = worst
        self.checked: int = checked
        self.skipped: int = skipped
        self.tolerance: float = tolerance

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_relative_error < self.tolerance

    def __repr__(self):
        return (
            f'<GradCheckReport name={self.name!r} max_relative_error={self.max_relative_error:.3g} '
            f'worst={self.worst!r} checked={self.checked} skipped={self.skipped} passed={self.passed}>'
        )


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, 1e-8)``, elementwise."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def kink_signature(cache: Any) -> bytes:
    """
    Serializes the activation pattern recorded in a forward cache: ReLU masks,
    max-pool argmaxes and the sign of bare difference arrays.
    """
    parts: List[bytes] = []

    def walk(node: Any) -> None:
        if isinstance(node, dict):
            for key in ('positive', 'argmax'):
                if key in node:
                    parts.append(np.asarray(node[key]).tobytes())
        elif isinstance(node, np.ndarray):
            parts.append(np.sign(node).tobytes())
        elif isinstance(node, (list, tuple)):
            for item in node:
                walk(item)

    walk(cache)
    return b''.join(parts)


def compare_gradients(
        name: str,
        objective: Objective,
        tensors: Dict[str, Tuple[np.ndarray, np.ndarray]],
        *,
        h: float = 1e-3,
        samples: Optional[int] = 40,
        seed: int = 0,
        tolerance: float = GRADCHECK_TOLERANCE
) -> GradCheckReport:
    """
    Compares analytic gradients with central differences of ``objective``.

    Parameters
    ----------
    name : :class:`str`
        Label of the report.
    objective : Callable[[], Tuple[:class:`float`, :class:`bytes`]]
        Recomputes the scalar objective from the current tensor values and
        returns it with the activation pattern it went through.
    tensors : Dict[:class:`str`, Tuple[:class:`numpy.ndarray`, :class:`numpy.ndarray`]]
        ``(array, analytic gradient)`` per name; each array is perturbed in place
        and restored.
    h : :class:`float`
        The finite-difference step.
    samples : Optional[:class:`int`]
        Coordinates checked per tensor, drawn with ``seed``; ``None`` checks all.
    seed : :class:`int`
    tolerance : :class:`float`
        Largest relative error that passes.

    Returns
    -------
    :class:`GradCheckReport`
    """
    rng = np.random.default_rng(seed)
    _, reference = objective()
    worst_error, worst_name, checked, skipped = 0.0, '', 0, 0

    for tensor_name, (array, analytic) in tensors.items():
        flat = array.reshape(-1)
        if not np.shares_memory(flat, array):
            raise ValueError(f'{tensor_name} must be a contiguous array to be perturbed in place')
        grad = np.asarray(analytic).reshape(-1)
        if samples is None or samples >= flat.size:
            coordinates = np.arange(flat.size)
        else:
            coordinates = np.sort(rng.choice(flat.size, size=samples, replace=False))

        for i in coordinates:
            original = flat[i]
            flat[i] = original + h
            plus, plus_pattern = objective()
            flat[i] = original - h
            minus, minus_pattern = objective()
            flat[i] = original

            if plus_pattern != reference or minus_pattern != reference:
                skipped += 1
                continue

            error = float(relative_error(grad[i], (plus - minus) / (2.0 * h)))
            checked += 1
            if error > worst_error:
                worst_error, worst_name = error, tensor_name

    report = GradCheckReport(
        name=name, max_relative_error=worst_error, worst=worst_name,
        checked=checked, skipped=skipped, tolerance=tolerance
    )
    log.debug('%r', report)
    return report


def check_layer(
        name: str,
        layer: Layer,
        x: np.ndarray,
        *,
        training: bool = True,
        seed: int = 0,
        h: float = 1e-3,
        samples: Optional[int] = 40,
        corrupt: float = 1.0
) -> GradCheckReport:
    """
    Checks one layer against the objective ``sum(layer(x) * R)`` for a fixed random ``R``.

    Dropout masks are redrawn from the same seed on every evaluation. ``corrupt``
    scales the analytic gradients; anything but 1 must make the check fail.
    """
    x = np.array(x, dtype=np.float64)

    def context() -> ForwardContext:
        return ForwardContext(training=training, rng=np.random.default_rng(seed))

    y, _ = layer.forward(x, context())
    projection = np.random.default_rng([seed, 1]).standard_normal(y.shape)

    def objective() -> Tuple[float, bytes]:
        out, cache = layer.forward(x, context())
        return float(np.sum(out * projection)), kink_signature(cache)

    for _, parameter in layer.parameters():
        parameter.grad[...] = 0.0
    _, cache = layer.forward(x, context())
    dx = layer.backward(projection, cache)

    tensors = {'input': (x, dx * corrupt)}
    for parameter_name, parameter in layer.parameters():
        if parameter.trainable:
            tensors[parameter_name] = (parameter.value, parameter.grad * corrupt)
    return compare_gradients(name, objective, tensors, h=h, samples=samples, seed=seed)


def grad_check(
        network: Network,
        inputs: Any,
        labels: np.ndarray,
        *,
        h: float = 1e-3,
        samples: Optional[int] = 20,
        seed: int = 0,
        corrupt: float = 1.0
) -> GradCheckReport:
    """
    Checks every trainable parameter of ``network`` on the binary cross entropy of
    ``inputs`` (a window batch, or a pair of batches for Siamese networks) against ``labels``.

    The forward passes run in training mode with dropout masks redrawn from
    ``seed``; batch-norm running statistics are restored afterwards.
    """
    labels = np.asarray(labels, dtype=np.float64)
    buffers = {name: p.value.copy() for name, p in network.params.items() if not p.trainable}

    def context() -> ForwardContext:
        return ForwardContext(training=True, rng=np.random.default_rng(seed))

    def objective() -> Tuple[float, bytes]:
        prob, cache = network.forward(inputs, context())
        return bce_loss(prob, labels)[0], kink_signature(cache)

    network.params.zero_grad()
    prob, cache = network.forward(inputs, context())
    _, dprob = bce_loss(prob, labels)
    network.backward(dprob, cache)

    tensors = {name: (p.value, p.grad * corrupt) for name, p in network.params.trainable()}
    report = compare_gradients(network.architecture.value, objective, tensors, h=h, samples=samples, seed=seed)

    for name, value in buffers.items():
        network.params[name].value[...] = value
    network.params.zero_grad()
    return report


def small_config(architecture: Architecture, seed: int = 0) -> ModelConfig:
    """A narrow configuration that keeps full-network checks fast."""
    return ModelConfig(
        architecture,
        conv_filters=(4, 3),
        lstm_hidden=4,
        lstm_layers=2,
        head_widths=(6, 5, 4),
        dropout=0.2,
        seed=seed,
    )


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    x = rng.standard_normal(shape)
    return x + 0.1 * np.sign(x)


def run_gradient_suite(seed: int = 0, *, instances: int = 1) -> List[GradCheckReport]:
    """
    Checks every layer kind and the four architectures on seeded random data.

    Used by ``pyegd gradcheck``.
    """
    reports: List[GradCheckReport] = []

    for instance in range(instances):
        rng = np.random.default_rng([seed, instance])
        distinct = (rng.permutation(48).reshape(2, 3, 8) - 24.0) * 0.1
        layer_cases = [
            ('conv1d', Conv1d(3, 4, 3, rng), rng.standard_normal((2, 3, 8))),
            ('maxpool1d', MaxPool1d(2), distinct),
            ('batchnorm1d', BatchNorm1d(3), rng.standard_normal((4, 3, 5))),
            ('dropout', Dropout(0.3), rng.standard_normal((2, 6))),
            ('dense', Dense(5, 4, rng), rng.standard_normal((3, 5))),
            ('relu', ReLU(), _away_from_zero(rng, (3, 5))),
            ('sigmoid', Sigmoid(), rng.standard_normal((3, 5))),
            ('lstm', LSTM(4, 4, rng), rng.standard_normal((2, 3, 4))),
        ]
        for name, layer, x in layer_cases:
            reports.append(check_layer(name, layer, x, seed=seed + instance, samples=None))

        for architecture in Architecture:
            network = build_model(small_config(architecture, seed=seed + instance))
            if architecture.siamese:
                inputs: Any = (rng.standard_normal((2, 26, 30)), rng.standard_normal((2, 26, 30)))
                labels = np.array([1.0, 0.0])
            else:
                inputs = rng.standard_normal((3, 26, 30))
                labels = np.array([1.0, 0.0, 1.0])
            reports.append(grad_check(network, inputs, labels, seed=seed + instance))

    return reports
