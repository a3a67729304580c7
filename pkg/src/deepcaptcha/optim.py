"""Parameter update rules: Adam and SGD with Nesterov momentum.

Both optimizers update parameter arrays in place and keep per-parameter
state arrays matching the parameter shapes.
"""

from __future__ import annotations

import numpy as np

from .ops import ShapeError


def _check_triples(params, grads, state):
    if len(params) != len(grads) or len(params) != len(state):
        raise ShapeError(
            f"parameter/gradient/state counts differ: {len(params)}/{len(grads)}/{len(state)}"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"grad {i} shape {g.shape} != param shape {p.shape}")


class Adam:
    """Adaptive moment estimation.

    Per step: decayed first/second moment averages of the gradient, bias
    correction by 1-beta^t with t counted after the increment, then
    theta -= eta * m_hat / (sqrt(v_hat) + epsilon).
    """

    def __init__(self, params, eta=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        _check_triples(params, grads, self.m)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= (self.eta / c1) * m / (np.sqrt(v / c2) + self.epsilon)


class SgdNesterov:
    """SGD with (optional) Nesterov momentum, the comparison baseline.

    v <- mu*v - eta*g; Nesterov applies the lookahead to the parameters
    (theta += mu*v - eta*g), plain momentum applies v directly.
    """

    def __init__(self, params, eta=0.01, momentum=0.9, nesterov=True):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.eta = eta
        self.momentum = momentum
        self.nesterov = nesterov
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        _check_triples(params, grads, self.velocity)
        mu, eta = self.momentum, self.eta
        for p, g, v in zip(params, grads, self.velocity):
            v *= mu
            v -= eta * g
            if self.nesterov:
                p += mu * v
                p -= eta * g
            else:
                p += v
