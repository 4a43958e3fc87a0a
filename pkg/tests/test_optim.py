import numpy as np
import pytest

from satkit.errors import ConfigError, GraphError
from satkit.optim import SGD, Adam, make_optimizer
from satkit.tensor import Tape, Tensor, backward, mul, scale, tsum


def _grads_for(params, fn):
    with Tape() as tape:
        loss = fn(*params)
    return backward(tape, loss)


def test_sgd_step_hand_value():
    p = Tensor([1.0], requires_grad=True)
    grads = _grads_for([p], lambda t: tsum(scale(t, 2.0)))  # grad = 2
    (new_p,) = SGD(lr=0.1).step([p], grads)
    assert new_p.data[0] == pytest.approx(0.8, abs=1e-15)


def test_sgd_returns_new_tensors():
    p = Tensor([1.0], requires_grad=True)
    grads = _grads_for([p], tsum)
    (new_p,) = SGD(lr=0.5).step([p], grads)
    assert new_p is not p
    assert p.data[0] == 1.0
    assert new_p.requires_grad


def test_adam_first_step_is_lr_sized():
    # With g=1 on step one, m_hat = v_hat = 1, so the step is lr/(1+eps).
    p = Tensor([0.0], requires_grad=True)
    grads = _grads_for([p], tsum)  # grad = 1
    (new_p,) = Adam(lr=0.001).step([p], grads)
    assert new_p.data[0] == pytest.approx(-0.001, abs=1e-9)


def test_adam_matches_reference_trajectory():
    # Quadratic loss 0.5*sum(p^2): grad = p. Track three steps against a
    # straight transcription of the update equations.
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps)

    ref = p.data.copy()
    m = np.zeros(2)
    v = np.zeros(2)
    for t in range(1, 4):
        grads = _grads_for([p], lambda q: tsum(scale(mul(q, q), 0.5)))
        (p,) = opt.step([p], grads)

        g = ref.copy()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        ref = ref - lr * m_hat / (np.sqrt(v_hat) + eps)
        np.testing.assert_allclose(p.data, ref, atol=1e-15)


def test_adam_state_tracks_each_parameter():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([1.0], requires_grad=True)
    opt = Adam(lr=0.1)
    for _ in range(3):
        grads = _grads_for([a, b], lambda x, y: tsum(mul(x, y)))
        a, b = opt.step([a, b], grads)
    # symmetric problem, both parameters follow the same path
    assert a.data[0] == pytest.approx(b.data[0], abs=1e-15)
    assert a.data[0] < 1.0


def test_missing_gradient_is_an_error():
    p = Tensor([1.0], requires_grad=True, name="weights")
    q = Tensor([1.0], requires_grad=True, name="spare")
    grads = _grads_for([p], tsum)
    with pytest.raises(GraphError, match="spare"):
        SGD(lr=0.1).step([p, q], grads)


def test_bad_learning_rate_rejected():
    with pytest.raises(ConfigError):
        SGD(lr=0.0)
    with pytest.raises(ConfigError):
        Adam(lr=-1.0)
    with pytest.raises(ConfigError):
        Adam(beta1=1.0)


def test_make_optimizer():
    assert isinstance(make_optimizer("sgd", 0.1), SGD)
    assert isinstance(make_optimizer("adam", 0.1), Adam)
    with pytest.raises(ConfigError):
        make_optimizer("lbfgs", 0.1)
