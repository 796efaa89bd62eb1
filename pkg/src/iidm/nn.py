"""Parameter containers and the few layer types the networks are built from."""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .numerics import Tensor, conv2d, matmul


class Module:
    """Collects Tensor parameters from attributes, recursively.

    Names are dotted attribute paths; list members use their index.
    """

    def named_params(self, prefix=""):
        out = {}
        for key in sorted(vars(self)):
            val = getattr(self, key)
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_params(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{name}.{i}."))
                    elif isinstance(item, Tensor):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_params().values())

    def param_count(self):
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_params().items()}

    def load_state_dict(self, state, prefix=""):
        params = self.named_params()
        for name, p in params.items():
            key = prefix + name
            if key not in state:
                raise KeyError(f"missing parameter {key!r}")
            arr = np.asarray(state[key], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{key}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, c_in, c_out, rng, k=3, stride=1, bias=True, zero=False):
        fan_in = c_in * k * k
        w = np.zeros((c_out, c_in, k, k)) if zero else rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, gain=2.0):
        self.w = Tensor(rng.standard_normal((d_in, d_out)) * np.sqrt(gain / d_in), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x):
        y = matmul(x, self.w)
        return y + self.b if self.b is not None else y


@contextmanager
def inference(module: Module):
    """Temporarily drop requires_grad so forward passes build no tape."""
    params = module.parameters()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield module
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag
