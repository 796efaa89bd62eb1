import numpy as np

from .tensor import GradientError


def zero_grad(params):
    for p in params:
        p.grad = None


def sgd_step(params, lr):
    """In-place ``p <- p - lr * grad``; grads are cleared afterwards."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise GradientError(f"sgd_step: no grad on {missing[:3]}")
    for p in params:
        p.data -= lr * p.grad
        p.grad = None


class Adam:
    """Adam with bias correction. Parameters without a grad are skipped."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self):
        zero_grad(self.params)


def grad_norm(params):
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None)))
