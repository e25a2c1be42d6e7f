"""Adam optimizer with per-parameter state and a linear LR schedule."""

import numpy as np

from evonas.errors import ContractError
from evonas.tensor import Tensor


def adam_update(data, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on data/m/v.

    ``step`` is the 1-based count of updates this parameter has received.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a fixed set of parameters.

    Parameters that have no gradient at step() time are skipped entirely,
    including their moment state and step counter, so a parameter's update
    sequence depends only on the steps in which it actually took part.
    This matters for single-path training where most of the weight set is
    untouched on any given step.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._state = {}

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            state = self._state.get(id(p))
            if state is None:
                state = [np.zeros_like(p.data), np.zeros_like(p.data), 0]
                self._state[id(p)] = state
            state[2] += 1
            adam_update(p.data, p.grad, state[0], state[1], state[2],
                        self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def adam_step(params, grads, lr, beta1, beta2, eps, step, state):
    """Functional single step over matched parameter/gradient lists.

    ``state`` maps parameter index -> (m, v) and is created on first use.
    Raises ContractError if a gradient is missing.
    """
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise ContractError(f"missing gradient for parameter {i}")
        data = p.data if isinstance(p, Tensor) else p
        if i not in state:
            state[i] = (np.zeros_like(data), np.zeros_like(data))
        m, v = state[i]
        adam_update(data, g, m, v, step, lr, beta1, beta2, eps)
    return params


class LinearDecay:
    """Learning rate decaying linearly from ``base`` to exactly 0.

    ``rate(t)`` is the rate used for step t (0-based); it reaches 0 at
    t == total_steps.
    """

    def __init__(self, base, total_steps):
        if total_steps < 1:
            raise ContractError(f"total_steps must be >= 1, got {total_steps}")
        self.base = base
        self.total_steps = total_steps

    def rate(self, step):
        frac = min(max(step, 0), self.total_steps) / self.total_steps
        return self.base * (1.0 - frac)
