"""Conditional U-Net noise predictor with fusion and coordinate-MLP upsampling.

Wiring for widths (w0, w1, w2)::

    x0 = [y_t, f0]           -> conv -> h0 (w0, H)
    h1 = down(h0) fused f1   -> (w1, H/2)
    h2 = down(h1) fused f2   -> (w2, H/4)
    m  = conv(h2)
    u1 = conv([inr(m),  h1]) -> (w1, H/2)
    u0 = conv([inr(u1), h0]) -> (w0, H)
    eps = conv(u0)           -> (1, H)

Odd sizes are handled by ``ceil`` halving in the strided convs; the decoder
upsamples back to the recorded encoder sizes, so nothing is cropped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..inr import ConcatFuse, FusionBlock, InrHead, inr_upsample
from ..nn import Conv2d, Linear, Module
from ..numerics import Tensor, concat, relu, reshape

TIME_DIM = 32


@dataclass
class Pyramid:
    levels: list   # Tensors f^(0) .. f^(L)
    padded: list   # per level: True when the previous level had an odd side

    @property
    def shapes(self):
        return [lv.shape[2:] for lv in self.levels]


def cond_features(f0, convs):
    """f^(i) = relu(conv_s2(f^(i-1))) for each stride-2 conv in ``convs``."""
    f0 = f0 if isinstance(f0, Tensor) else Tensor(f0)
    levels, padded = [f0], [False]
    for conv in convs:
        prev = levels[-1]
        if conv.stride != 2:
            raise ValueError("pyramid convs must have stride 2")
        padded.append(bool(prev.shape[2] % 2 or prev.shape[3] % 2))
        levels.append(relu(conv(prev)))
    return Pyramid(levels, padded)


def timestep_embedding(t, dim=TIME_DIM):
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class DenoiseNet(Module):
    def __init__(self, c_cond, rng, widths=(16, 32, 64), fusion="attention"):
        if len(widths) != 3:
            raise ValueError("DenoiseNet expects three level widths")
        w0, w1, w2 = self.widths = tuple(int(w) for w in widths)
        self.c_cond = int(c_cond)
        self.fusion = fusion
        self.time_fc = Linear(TIME_DIM, 2 * w0, rng)
        self.time_proj = [Linear(2 * w0, w, rng, gain=1.0) for w in self.widths]
        self.pyramid = [Conv2d(c_cond, w1, rng, stride=2), Conv2d(w1, w2, rng, stride=2)]
        # y and the conditioning get separate input convs (same function as one conv on
        # their concat) so the single noisy channel is not drowned out at init
        self.conv_in = Conv2d(1, w0, rng)
        self.cond_in = Conv2d(c_cond, w0, rng, bias=False)
        self.down1 = Conv2d(w0, w1, rng, stride=2)
        self.down2 = Conv2d(w1, w2, rng, stride=2)
        fuse = {"attention": FusionBlock, "concat": ConcatFuse}[fusion]
        self.fuse = [fuse(w1, w1, rng), fuse(w2, w2, rng)]
        self.mid = Conv2d(w2, w2, rng)
        self.inr = [InrHead(w1, w1, rng), InrHead(w2, w1, rng)]
        self.up1 = Conv2d(2 * w1, w1, rng)
        self.up0 = Conv2d(w1 + w0, w0, rng)
        self.conv_out = Conv2d(w0, 1, rng, zero=True)

    def _temb(self, t, n):
        t = np.broadcast_to(np.atleast_1d(t), (n,))
        e = relu(self.time_fc(Tensor(timestep_embedding(t))))
        return [reshape(p(e), (n, -1, 1, 1)) for p in self.time_proj]

    def __call__(self, y, t, f0):
        y = y if isinstance(y, Tensor) else Tensor(y)
        f0 = f0 if isinstance(f0, Tensor) else Tensor(f0)
        if y.shape[2:] != f0.shape[2:] or y.shape[0] != f0.shape[0]:
            raise ValueError(f"y {y.shape} and conditioning {f0.shape} misaligned")
        if f0.shape[1] != self.c_cond:
            raise ValueError(f"expected {self.c_cond} conditioning channels, got {f0.shape[1]}")
        n = y.shape[0]
        te = self._temb(t, n)
        pyr = cond_features(f0, self.pyramid)
        h0 = relu(self.conv_in(y) + self.cond_in(f0) + te[0])
        h1 = self.fuse[0](relu(self.down1(h0) + te[1]), pyr.levels[1])
        h2 = self.fuse[1](relu(self.down2(h1) + te[2]), pyr.levels[2])
        m = relu(self.mid(h2))
        u1 = relu(self.up1(concat([inr_upsample(m, h1.shape[2:], self.inr[1]), h1], axis=1)))
        u0 = relu(self.up0(concat([inr_upsample(u1, h0.shape[2:], self.inr[0]), h0], axis=1)))
        return self.conv_out(u0)
