import numpy as np

from .tensor import backward


def numeric_grad(fn, arrays, index, h=1e-5):
    """Central finite-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    target = arrays[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = target[i]
        target[i] = orig + h
        fp = fn(*arrays)
        target[i] = orig - h
        fm = fn(*arrays)
        target[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def check_grad(build, params, h=1e-5):
    """Compare autodiff and finite-difference gradients of ``build()``.

    ``build`` returns a scalar Tensor from the current values of ``params``
    (leaf Tensors with requires_grad). Returns the worst relative error over
    all parameters, measured as ``|a - n| / max(|a|, |n|, 1e-8)`` on the
    full gradient vector norm.
    """
    for p in params:
        p.grad = None
    loss = build()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, a in zip(params, analytic):
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = build().item()
            flat[i] = orig - h
            fm = build().item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - num) / denom))
    return worst
