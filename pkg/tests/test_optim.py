import numpy as np
import pytest

from ganlab.optim import SGD, Adam, OptimizerState, RMSprop, optimizer_step
from ganlab.tensor import NonFiniteError, Tensor


def make(value):
    return {"p": Tensor(np.array([value], dtype=np.float64), requires_grad=True)}


def test_sgd_plain_step():
    params = make(1.0)
    state = OptimizerState(SGD(momentum=0.0), learning_rate=0.1)
    optimizer_step(state, params, {"p": np.array([2.0])})
    np.testing.assert_allclose(params["p"].data, [0.8])
    assert state.step_count == 1


def test_adam_first_step_matches_hand_recurrence():
    # beta1=0: m = g, m_hat = g; v_hat = g^2 after bias correction at t=1,
    # so the update is -lr * g / (|g| + eps).
    params = make(0.0)
    state = OptimizerState(Adam(beta1=0.0, beta2=0.99, eps=1e-8), learning_rate=1e-3)
    g = 0.3
    optimizer_step(state, params, {"p": np.array([g])})
    expected = -1e-3 * g / (np.sqrt(g * g) + 1e-8)
    np.testing.assert_allclose(params["p"].data, [expected], rtol=1e-12)


def test_rmsprop_zero_grad_is_identity():
    params = make(5.0)
    state = OptimizerState(RMSprop(decay=0.9), learning_rate=0.01)
    optimizer_step(state, params, {"p": np.array([0.0])})
    np.testing.assert_allclose(params["p"].data, [5.0])


def test_nan_gradient_aborts_without_partial_update():
    params = {"a": Tensor(np.array([1.0]), requires_grad=True),
              "b": Tensor(np.array([1.0]), requires_grad=True)}
    state = OptimizerState(SGD(), learning_rate=0.1)
    with pytest.raises(NonFiniteError):
        optimizer_step(state, params, {"a": np.array([1.0]), "b": np.array([np.nan])})
    np.testing.assert_allclose(params["a"].data, [1.0])
    np.testing.assert_allclose(params["b"].data, [1.0])
    assert state.step_count == 0


def test_step_count_increments_by_one():
    params = make(0.0)
    state = OptimizerState(Adam(), learning_rate=1e-3)
    for i in range(5):
        optimizer_step(state, params, {"p": np.array([0.1])})
        assert state.step_count == i + 1


def test_momentum_accumulates():
    params = make(0.0)
    state = OptimizerState(SGD(momentum=0.5), learning_rate=1.0)
    optimizer_step(state, params, {"p": np.array([1.0])})
    optimizer_step(state, params, {"p": np.array([1.0])})
    # velocities: 1.0 then 1.5 -> total displacement 2.5
    np.testing.assert_allclose(params["p"].data, [-2.5])


def test_learning_rate_must_be_positive():
    with pytest.raises(ValueError):
        OptimizerState(SGD(), learning_rate=0.0)
