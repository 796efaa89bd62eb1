"""VGG-19-shaped encoder/decoder up to relu4_1, at arbitrary channel widths.

Encoder block N ends at the reluN_1 tap::

    enc_1: conv1_1
    enc_2: conv1_2, pool, conv2_1
    enc_3: conv2_2, pool, conv3_1
    enc_4: conv3_2, conv3_3, conv3_4, pool, conv4_1

Decoder block N maps reluN_1 features back to relu(N-1)_1 features (or the
image for N = 1), mirroring the encoder with nearest upsampling in place of
pooling.
"""
from __future__ import annotations

import numpy as np

from ..nn import Conv2d, Module
from ..numerics import Tensor, max_pool2, relu, upsample_nearest2

VGG_WIDTHS = (64, 128, 256, 512)
SLIM_WIDTHS = (10, 20, 58, 64)

POOL = "pool"
UP = "up"


def encoder_layout(widths, in_ch):
    c1, c2, c3, c4 = widths
    return [
        [(in_ch, c1)],
        [(c1, c1), POOL, (c1, c2)],
        [(c2, c2), POOL, (c2, c3)],
        [(c3, c3), (c3, c3), (c3, c3), POOL, (c3, c4)],
    ]


def decoder_layout(widths, in_ch):
    c1, c2, c3, c4 = widths
    return [
        [(c1, in_ch)],
        [(c2, c1), UP, (c1, c1)],
        [(c3, c2), UP, (c2, c2)],
        [(c4, c3), UP, (c3, c3), (c3, c3), (c3, c3)],
    ]


def layout_param_count(layout, k=3):
    """Closed-form weight + bias count of a block layout."""
    return sum(ci * co * k * k + co for block in layout for ci, co in
               (step for step in block if isinstance(step, tuple)))


class Block(Module):
    def __init__(self, steps, rng, final_relu=True):
        self.steps = [s if isinstance(s, str) else Conv2d(s[0], s[1], rng) for s in steps]
        self.final_relu = final_relu

    def __call__(self, x):
        last = max(i for i, s in enumerate(self.steps) if not isinstance(s, str))
        for i, s in enumerate(self.steps):
            if s == POOL:
                x = max_pool2(x)
            elif s == UP:
                x = upsample_nearest2(x)
            else:
                x = s(x)
                if i != last or self.final_relu:
                    x = relu(x)
        return x


class Coder(Module):
    """Paired encoder/decoder. ``enc[N-1]`` and ``dec[N-1]`` are block N."""

    def __init__(self, widths, in_ch, rng):
        self.widths = tuple(int(c) for c in widths)
        self.in_ch = int(in_ch)
        self.enc = [Block(b, rng) for b in encoder_layout(self.widths, in_ch)]
        self.dec = [Block(b, rng, final_relu=(n > 0)) for n, b in enumerate(decoder_layout(self.widths, in_ch))]

    def encode(self, x, depth=4):
        """Taps relu1_1 .. relu{depth}_1."""
        taps = []
        for block in self.enc[:depth]:
            x = block(x)
            taps.append(x)
        return taps

    def decode(self, f, from_level):
        """Run dec_{from_level} .. dec_1 and return the reconstructed image."""
        for n in range(from_level, 0, -1):
            f = self.dec[n - 1](f)
        return f

    def encoder_param_count(self):
        return sum(b.param_count() for b in self.enc)

    def decoder_param_count(self):
        return sum(b.param_count() for b in self.dec)


def as_batch(images):
    """Stack (H, W, C) images, or pass through an (N, C, H, W) array, as a Tensor."""
    if isinstance(images, Tensor):
        return images
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)[None]
    return Tensor(arr)


def compression_ratio(teacher_params, student_params):
    return teacher_params / student_params
