"""Coordinate-MLP upsampling and attention fusion used inside the denoiser.

Grids live in a shared [-1, 1]^2 frame with pixel-centre alignment: cell
``(r, c)`` of an ``h x w`` grid sits at ``(-1 + (2r+1)/h, -1 + (2c+1)/w)``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .nn import Conv2d, Linear, Module
from .numerics import Tensor, concat, matmul, relu, reshape, softmax, take, transpose

TIE_EPS = 1e-12


class CoordGrid:
    """Pixel-centre coordinates of an ``h x w`` grid, row-major, shape (h*w, 2)."""

    def __init__(self, h, w):
        if h < 1 or w < 1:
            raise ValueError(f"grid must be nonempty, got {h}x{w}")
        self.h, self.w = int(h), int(w)
        rows = -1.0 + (2.0 * np.arange(h) + 1.0) / h
        cols = -1.0 + (2.0 * np.arange(w) + 1.0) / w
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        self.coords = np.stack([rr.ravel(), cc.ravel()], axis=1)

    @property
    def shape(self):
        return self.h, self.w

    def spacing(self):
        return 2.0 / self.h, 2.0 / self.w


def nearest_index(grid: CoordGrid, queries):
    """Row-major index of the nearest grid centre for each (y, x) query.

    Queries are clamped to the frame. Among equidistant centres the one with
    the smallest (row, col) wins.
    """
    q = np.clip(np.asarray(queries, dtype=np.float64).reshape(-1, 2), -1.0, 1.0)
    d2 = ((q[:, None, :] - grid.coords[None, :, :]) ** 2).sum(-1)
    best = d2.min(axis=1, keepdims=True)
    return np.argmax(d2 <= best + TIE_EPS, axis=1)


def nearest_interp(h, grid: CoordGrid, queries):
    """Features and centres of the nearest cells.

    ``h`` is (N, C, gh, gw) (Tensor or array); returns (N, C, Q) features and
    (Q, 2) centres.
    """
    h = h if isinstance(h, Tensor) else Tensor(h)
    n, c, gh, gw = h.shape
    if (gh, gw) != grid.shape:
        raise ValueError(f"feature grid {gh}x{gw} does not match CoordGrid {grid.shape}")
    idx = nearest_index(grid, queries)
    return take(reshape(h, (n, c, gh * gw)), idx, axis=2), grid.coords[idx]


@lru_cache(maxsize=64)
def _upsample_plan(hc, wc, hf, wf):
    coarse, fine = CoordGrid(hc, wc), CoordGrid(hf, wf)
    idx = nearest_index(coarse, fine.coords)
    # offsets in units of coarse cells keep the MLP input O(1)
    offset = (fine.coords - coarse.coords[idx]) * np.array([hc, wc]) / 2.0
    return idx, offset.T.reshape(1, 2, hf, wf)


class InrHead(Module):
    """Two affine layers with one ReLU, applied per pixel to [feature, offset]."""

    def __init__(self, c_in, c_out, rng, hidden=None):
        hidden = hidden or max(c_in, c_out)
        self.fc1 = Conv2d(c_in + 2, hidden, rng, k=1)
        self.fc2 = Conv2d(hidden, c_out, rng, k=1)

    def __call__(self, x):
        return self.fc2(relu(self.fc1(x)))


def inr_upsample(h_next, fine_shape, head: InrHead):
    """Evaluate ``head`` at every fine-grid centre from its nearest coarse cell."""
    n, c, hc, wc = h_next.shape
    hf, wf = fine_shape
    if hf < hc or wf < wc or (hf, wf) == (hc, wc):
        raise ValueError(f"target grid {hf}x{wf} must be finer than source {hc}x{wc}")
    idx, offset = _upsample_plan(hc, wc, hf, wf)
    near = reshape(take(reshape(h_next, (n, c, hc * wc)), idx, axis=2), (n, c, hf, wf))
    off = Tensor(np.broadcast_to(offset, (n, 2, hf, wf)))
    return head(concat([near, off], axis=1))


def _tokens(x):
    n, c, h, w = x.shape
    return transpose(reshape(x, (n, c, h * w)), (0, 2, 1))


def _grid(t, h, w):
    n, p, c = t.shape
    return reshape(transpose(t, (0, 2, 1)), (n, c, h, w))


class FusionBlock(Module):
    """Single-head cross-attention (queries from u, keys/values from f) then an MLP.

    Both stages are residual, so the output has the shape of ``u``.
    """

    def __init__(self, c_u, c_f, rng):
        self.q = Linear(c_u, c_u, rng, gain=1.0)
        self.k = Linear(c_f, c_u, rng, bias=False, gain=1.0)  # a key bias shifts every score in a row equally
        self.v = Linear(c_f, c_u, rng, gain=1.0)
        self.mlp1 = Linear(c_u, 2 * c_u, rng)
        self.mlp2 = Linear(2 * c_u, c_u, rng, gain=1.0)
        self.last_weights = None

    def attention(self, u_tok, f_tok):
        q, k = self.q(u_tok), self.k(f_tok)
        scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(q.shape[-1]))
        a = softmax(scores, axis=-1)
        self.last_weights = a.data
        return matmul(a, self.v(f_tok))

    def __call__(self, u, f):
        if u.shape[0] != f.shape[0] or u.shape[2:] != f.shape[2:]:
            raise ValueError(f"fusion inputs misaligned: u {u.shape} vs f {f.shape}")
        h, w = u.shape[2:]
        x = _tokens(u)
        x = x + self.attention(x, _tokens(f))
        x = x + self.mlp2(relu(self.mlp1(x)))
        return _grid(x, h, w)


def attention_fuse(u, f, block: FusionBlock):
    return block(u, f)


class ConcatFuse(Module):
    """Ablation stand-in for FusionBlock: channel concat then a 1x1 conv."""

    def __init__(self, c_u, c_f, rng):
        self.proj = Conv2d(c_u + c_f, c_u, rng, k=1)

    def __call__(self, u, f):
        if u.shape[0] != f.shape[0] or u.shape[2:] != f.shape[2:]:
            raise ValueError(f"fusion inputs misaligned: u {u.shape} vs f {f.shape}")
        return self.proj(concat([u, f], axis=1))
