import numpy as np
import pytest

from pyegd import AdamState, ConfigError, Parameter, ParameterSet, ShapeError, adam_step


def make_params():
    params = ParameterSet()
    params.add('w', Parameter(np.array([1.0, -2.0, 0.5])))
    params.add('running', Parameter(np.array([3.0]), trainable=False))
    return params


def test_first_step_moves_by_learning_rate():
    params = make_params()
    params['w'].grad[...] = [0.3, -40.0, 1e-3]
    state = AdamState(params, lr=0.01)

    adam_step(params, state)

    np.testing.assert_allclose(params['w'].value, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], rtol=1e-5)
    assert params['running'].value[0] == 3.0
    assert state.t == 1


def test_zero_gradient_keeps_value():
    params = make_params()
    state = AdamState(params)
    adam_step(params, state)
    np.testing.assert_array_equal(params['w'].value, [1.0, -2.0, 0.5])


def test_adam_minimizes_a_quadratic():
    params = ParameterSet([('x', Parameter(np.array([5.0, -3.0])))])
    state = AdamState(params, lr=0.1)
    for _ in range(500):
        params.zero_grad()
        params['x'].grad += 2.0 * params['x'].value
        adam_step(params, state)
    np.testing.assert_allclose(params['x'].value, 0.0, atol=1e-2)


def test_invalid_learning_rate():
    with pytest.raises(ConfigError):
        AdamState(make_params(), lr=0.0)


def test_state_must_match_parameters():
    state = AdamState(make_params())
    other = ParameterSet([('v', Parameter(np.zeros(2)))])
    with pytest.raises(ShapeError):
        adam_step(other, state)
