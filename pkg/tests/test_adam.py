import numpy as np
import pytest

from minitrack.errors import DimensionError, NumericError
from minitrack.nn import AdamSet, AdamState, adam_step


def scalar_adam_oracle(grad_fn, p0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8):
    """Plain-Python recurrence, independent of the array implementation."""
    p, m, v = p0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(p)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (v_hat**0.5 + eps)
    return p


def test_zero_gradient_no_change():
    param = np.array([1.0, -2.0, 3.0])
    state = AdamState.for_param(param, lr=0.1)
    out = adam_step(param, np.zeros(3), state)
    assert np.array_equal(out, param)
    assert np.all(state.m == 0) and np.all(state.v == 0)
    assert state.step == 1


def test_first_step_is_signed_lr():
    # deviation from -lr*sign(g) is lr*eps/(|g|+eps), far below 1e-6*lr here
    for g in (3.7, -0.12, 120.0):
        param = np.array([0.0])
        state = AdamState.for_param(param, lr=0.01)
        out = adam_step(param, np.array([g]), state)
        assert abs(out[0] - (-0.01 * np.sign(g))) < 1e-6 * 0.01


def test_step_count_increases():
    param = np.zeros(2)
    state = AdamState.for_param(param)
    for expect in (1, 2, 3):
        param = adam_step(param, np.ones(2), state)
        assert state.step == expect


def test_quadratic_convergence_matches_oracle():
    # minimize (p - 3)^2 from 0, lr 0.1, 200 steps
    grad_fn = lambda p: 2.0 * (p - 3.0)
    expected = scalar_adam_oracle(grad_fn, 0.0, 0.1, 200)
    param = np.array([0.0])
    state = AdamState.for_param(param, lr=0.1)
    for _ in range(200):
        param = adam_step(param, grad_fn(param), state)
    assert abs(param[0] - expected) < 1e-12
    assert abs(param[0] - 3.0) < 0.1


def test_nonfinite_gradient_names_parameter():
    param = np.zeros(2)
    state = AdamState.for_param(param)
    with pytest.raises(NumericError, match="w_hidden"):
        adam_step(param, np.array([np.nan, 0.0]), state, name="w_hidden")


def test_shape_mismatch():
    param = np.zeros(2)
    state = AdamState.for_param(param)
    with pytest.raises(DimensionError):
        adam_step(param, np.zeros(3), state)


def test_adamset_updates_each_param_independently():
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(3,)), "b": rng.normal(size=(2, 2))}
    grads = {"a": rng.normal(size=(3,)), "b": rng.normal(size=(2, 2))}
    adam = AdamSet(lr=0.05)
    out = adam.update(params, grads)
    for name in params:
        st = AdamState.for_param(params[name], lr=0.05)
        assert np.allclose(out[name], adam_step(params[name], grads[name], st))
