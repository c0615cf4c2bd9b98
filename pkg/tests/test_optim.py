import numpy as np
import pytest

from ldl.optim import Optimizer, optimizer_step


def test_sgd_step():
    w = np.array([1.0, -2.0])
    Optimizer("sgd", 0.1).step([w], [np.array([10.0, 5.0])])
    np.testing.assert_allclose(w, [0.0, -2.5])


def test_adam_first_step_is_lr_times_sign():
    # bias correction makes the first update lr * g / (|g| + eps)
    g = np.array([0.3, -4.0, 1e-3])
    w = np.zeros(3)
    Optimizer("adam", 0.01).step([w], [g])
    np.testing.assert_allclose(w, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_two_steps_against_hand_computation():
    g1, g2 = 2.0, -1.0
    m = 0.1 * g1
    v = 0.001 * g1**2
    w = -0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    m = 0.9 * m + 0.1 * g2
    v = 0.999 * v + 0.001 * g2**2
    w -= 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    p = np.zeros(1)
    opt = Optimizer("adam", 0.1)
    opt.step([p], [np.array([g1])])
    opt.step([p], [np.array([g2])])
    np.testing.assert_allclose(p, [w], rtol=1e-12)


def test_adadelta_first_step():
    g = np.array([2.0])
    eg = 0.1 * 4.0
    u = np.sqrt(1e-6) / np.sqrt(eg + 1e-6) * 2.0
    p = np.zeros(1)
    Optimizer("adadelta", 1.0).step([p], [g])
    np.testing.assert_allclose(p, [-u], rtol=1e-12)


@pytest.mark.parametrize("kind", ["sgd", "adam", "adadelta"])
def test_zero_gradient_leaves_weights(kind):
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    before = w.copy()
    opt = Optimizer(kind, 0.5)
    for _ in range(3):
        optimizer_step(opt, [w], [np.zeros_like(w)])
    np.testing.assert_array_equal(w, before)


@pytest.mark.parametrize("kind", ["sgd", "adam", "adadelta"])
def test_minimizes_quadratic(kind):
    w = np.array([5.0, -3.0])
    opt = Optimizer(kind, 0.1 if kind != "adadelta" else 1.0)
    start = float(w @ w)
    for _ in range(200):
        opt.step([w], [2 * w])
    assert float(w @ w) < start


def test_state_is_per_parameter():
    a, b = np.zeros(1), np.zeros(1)
    opt = Optimizer("adam", 0.1)
    opt.step([a], [np.array([1.0])])
    opt.step([a, b], [np.array([1.0]), np.array([1.0])])
    # b's first step is a full lr step; a's second step is also lr (constant gradient)
    np.testing.assert_allclose(b, [-0.1], rtol=1e-6)
    np.testing.assert_allclose(a, [-0.2], rtol=1e-6)


def test_validation():
    with pytest.raises(ValueError):
        Optimizer("rmsprop")
    with pytest.raises(ValueError):
        Optimizer("sgd", 0.0)
    with pytest.raises(ValueError):
        Optimizer("sgd").step([np.zeros(2)], [np.zeros(3)])
