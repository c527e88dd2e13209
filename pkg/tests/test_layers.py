import numpy as np
import pytest

from pyegd import (
    LSTM,
    BatchNorm1d,
    ConfigError,
    Conv1d,
    Dense,
    Dropout,
    ForwardContext,
    MaxPool1d,
    ModeError,
    NumericalError,
    Parameter,
    ParameterSet,
    ReLU,
    Sequential,
    ShapeError,
    Sigmoid,
    bce_loss,
    check_finite,
    conv1d_forward,
    maxpool1d_forward,
)

TRAIN = ForwardContext(training=True, rng=np.random.default_rng(0))
EVAL = ForwardContext(training=False)


def test_conv_is_valid_cross_correlation():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 9))
    kernels = rng.standard_normal((4, 3, 3))
    bias = rng.standard_normal(4)

    y, _ = conv1d_forward(x, kernels, bias)

    assert y.shape == (2, 4, 7)
    expected = np.array([
        [[np.sum(x[n, :, t:t + 3] * kernels[o]) + bias[o] for t in range(7)] for o in range(4)]
        for n in range(2)
    ])
    np.testing.assert_allclose(y, expected)


def test_conv_rejects_short_input():
    with pytest.raises(ShapeError):
        conv1d_forward(np.zeros((1, 3, 2)), np.zeros((4, 3, 3)), np.zeros(4))
    with pytest.raises(ShapeError):
        Conv1d(3, 4, 3, np.random.default_rng(0)).output_shape((3, 2))


def test_maxpool_drops_remainder_and_prefers_first_tie():
    x = np.array([[[1.0, 1.0, 0.0, 5.0, 7.0]]])
    y, cache = maxpool1d_forward(x, 2)
    np.testing.assert_array_equal(y, [[[1.0, 5.0]]])
    np.testing.assert_array_equal(cache['argmax'], [[[0, 1]]])
    with pytest.raises(ShapeError):
        maxpool1d_forward(np.zeros((1, 1, 1)), 2)


def test_batchnorm_needs_a_training_batch():
    layer = BatchNorm1d(3)
    x = np.random.default_rng(0).standard_normal((4, 3, 5))
    with pytest.raises(ModeError):
        layer.forward(x, EVAL)

    y, _ = layer.forward(x, TRAIN)
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0.0, atol=1e-12)
    assert layer.batches_tracked.value[0] == 1
    np.testing.assert_allclose(layer.running_mean.value, 0.1 * x.mean(axis=(0, 2)))

    layer.forward(x, EVAL)
    assert layer.batches_tracked.value[0] == 1


def test_dropout():
    x = np.ones((50, 40))
    layer = Dropout(0.5)

    y, _ = layer.forward(x, EVAL)
    assert y is x

    y, _ = layer.forward(x, ForwardContext(training=True, rng=np.random.default_rng(1)))
    assert set(np.unique(y)) == {0.0, 2.0}

    with pytest.raises(ConfigError):
        Dropout(1.0)
    with pytest.raises(ConfigError):
        layer.forward(x, ForwardContext(training=True))


def test_lstm_shapes():
    layer = LSTM(4, 6, np.random.default_rng(0))
    y, _ = layer.forward(np.zeros((2, 5, 4)), EVAL)
    assert y.shape == (2, 5, 6)
    with pytest.raises(ShapeError):
        layer.output_shape((5, 3))


def test_sequential_output_shape():
    rng = np.random.default_rng(0)
    model = Sequential([Conv1d(26, 8, 3, rng), ReLU(), MaxPool1d(2), Conv1d(8, 4, 3, rng)])
    assert model.output_shape((26, 30)) == (4, 12)
    y, _ = model.forward(np.zeros((3, 26, 30)), EVAL)
    assert y.shape == (3, 4, 12)


def test_dense_shape_mismatch():
    layer = Dense(5, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        layer.forward(np.zeros((2, 4)), EVAL)


def test_sigmoid_is_stable():
    y, _ = Sigmoid().forward(np.array([[-1000.0, 0.0, 1000.0]]), EVAL)
    np.testing.assert_allclose(y, [[0.0, 0.5, 1.0]])


def test_bce_clamps():
    loss, grad = bce_loss(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert np.isfinite(loss)
    np.testing.assert_array_equal(grad, [0.0, 0.0])

    loss, _ = bce_loss(np.array([0.5]), np.array([1.0]))
    assert loss == pytest.approx(np.log(2.0))


def test_check_finite():
    with pytest.raises(NumericalError):
        check_finite(np.array([1.0, np.nan]), 'test')


def test_parameter_set():
    params = ParameterSet()
    params.add('a.weight', Parameter(np.zeros((2, 3))))
    params.add('a.stat', Parameter(np.ones(2), trainable=False))
    assert params.manifest() == [('a.weight', (2, 3)), ('a.stat', (2,))]
    assert [name for name, _ in params.trainable()] == ['a.weight']
    assert params.count() == 6
    assert params.count(trainable_only=False) == 8

    state = params.state()
    state['a.weight'] = np.full((2, 3), 0.1)
    params.load_state(state)
    params.round_to_float32()
    assert params['a.weight'].value[0, 0] == np.float64(np.float32(0.1))
