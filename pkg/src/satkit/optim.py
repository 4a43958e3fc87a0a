"""First-order optimizers over lists of parameter tensors.

Parameters are immutable tensors, so a step returns replacement tensors
rather than mutating in place; optimizer state (Adam moments) is positional
and carries over across steps as long as the parameter list keeps its order.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, GraphError
from .tensor import Tensor


def _updated(param, new_data):
    t = Tensor._wrap(new_data, requires_grad=param.requires_grad, name=param.name)
    return t


def _grad_for(param, grads, index):
    g = grads.get(param)
    if g is None:
        label = param.name or f"parameter {index}"
        raise GraphError(f"no gradient available for {label}")
    return g


class SGD:
    """Plain gradient descent with a fixed step size."""

    def __init__(self, lr=0.01):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)

    def step(self, params, grads):
        out = []
        for i, p in enumerate(params):
            g = _grad_for(p, grads, i)
            out.append(_updated(p, p.data - self.lr * g))
        return out


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params, grads):
        if self._m is None:
            self._m = [np.zeros(p.shape) for p in params]
            self._v = [np.zeros(p.shape) for p in params]
        if len(self._m) != len(params):
            raise ConfigError(
                f"optimizer state holds {len(self._m)} parameters, got {len(params)}"
            )
        self._t += 1
        b1t = 1.0 - self.beta1**self._t
        b2t = 1.0 - self.beta2**self._t
        out = []
        for i, p in enumerate(params):
            g = _grad_for(p, grads, i)
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / b1t
            v_hat = self._v[i] / b2t
            out.append(_updated(p, p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)))
        return out


def make_optimizer(kind, lr):
    kinds = {"sgd": SGD, "adam": Adam}
    if kind not in kinds:
        raise ConfigError(f"unknown optimizer {kind!r}, expected one of {sorted(kinds)}")
    return kinds[kind](lr=lr)
