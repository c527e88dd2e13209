import numpy as np
import pytest

from pyegd import (
    LSTM,
    Architecture,
    BatchNorm1d,
    Conv1d,
    Dense,
    Dropout,
    MaxPool1d,
    ReLU,
    Sigmoid,
    build_model,
    check_layer,
    grad_check,
    relative_error,
    run_gradient_suite,
    small_config,
)


LAYER_CASES = {
    'conv1d': lambda rng: (Conv1d(3, 4, 3, rng), rng.standard_normal((2, 3, 8))),
    'maxpool1d': lambda rng: (MaxPool1d(2), (rng.permutation(48).reshape(2, 3, 8) - 24.0) * 0.1),
    'batchnorm1d': lambda rng: (BatchNorm1d(3), rng.standard_normal((4, 3, 5))),
    'dropout': lambda rng: (Dropout(0.3), rng.standard_normal((2, 6))),
    'dense': lambda rng: (Dense(5, 4, rng), rng.standard_normal((3, 5))),
    'relu': lambda rng: (ReLU(), rng.standard_normal((3, 5)) + 0.5),
    'sigmoid': lambda rng: (Sigmoid(), rng.standard_normal((3, 5))),
    'lstm': lambda rng: (LSTM(4, 3, rng), rng.standard_normal((2, 3, 4))),
}


@pytest.mark.parametrize('name', list(LAYER_CASES))
def test_layer_gradients(name):
    layer, x = LAYER_CASES[name](np.random.default_rng(5))
    report = check_layer(name, layer, x, samples=None)
    assert report.passed, report


@pytest.mark.parametrize('name', list(LAYER_CASES))
def test_corrupted_gradients_fail(name):
    layer, x = LAYER_CASES[name](np.random.default_rng(5))
    report = check_layer(name, layer, x, samples=None, corrupt=1.5)
    assert not report.passed


@pytest.mark.parametrize('architecture', list(Architecture), ids=lambda a: a.value)
def test_network_gradients(architecture):
    rng = np.random.default_rng(2)
    network = build_model(small_config(architecture, seed=3))
    if architecture.siamese:
        inputs = (rng.standard_normal((2, 26, 30)), rng.standard_normal((2, 26, 30)))
        labels = np.array([1.0, 0.0])
    else:
        inputs = rng.standard_normal((3, 26, 30))
        labels = np.array([1.0, 0.0, 1.0])

    running = {name: p.value.copy() for name, p in network.params.items() if not p.trainable}
    report = grad_check(network, inputs, labels, seed=3)

    assert report.passed, report
    for name, value in running.items():
        np.testing.assert_array_equal(network.params[name].value, value)


def test_network_corruption_is_caught():
    network = build_model(small_config(Architecture.cnn))
    inputs = np.random.default_rng(0).standard_normal((3, 26, 30))
    report = grad_check(network, inputs, np.array([1.0, 0.0, 1.0]), corrupt=1.5)
    assert not report.passed


def test_relative_error_floor():
    assert relative_error(np.array(0.0), np.array(0.0)) == 0.0
    assert relative_error(np.array(1.0), np.array(2.0)) == pytest.approx(0.5)


@pytest.mark.slow
def test_gradient_suite():
    reports = run_gradient_suite(seed=1)
    assert len(reports) == 8 + len(Architecture)
    assert all(report.passed for report in reports)
