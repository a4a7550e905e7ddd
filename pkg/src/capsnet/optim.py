"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .errors import TrainingError
from .tensor import DTYPE, Tensor


class Adam:
    """Adaptive-moment gradient descent over a fixed parameter list.

    m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, then
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) with the step-count
    bias corrections m_hat = m/(1-b1^t), v_hat = v/(1-b2^t).
    """

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = DTYPE(1.0 - self.beta1**self.t)
        bc2 = DTYPE(1.0 - self.beta2**self.t)
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {i} at step {self.t}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= DTYPE(self.lr) * m_hat / (np.sqrt(v_hat) + DTYPE(self.eps))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
