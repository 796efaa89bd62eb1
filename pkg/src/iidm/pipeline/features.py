"""Conditioning features f0 for the denoiser, and dihedral augmentation.

Three extractors, matching the module toggles:

* ``raw``: the four bands, standardised with training statistics;
* ``vgg``: teacher relu1_1 stacked with nearest-upsampled relu2_1;
* ``kd``:  the same taps from the distilled student coder.

Feature channels are standardised with statistics from the training set;
constant channels keep unit scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..distill.vgg import Coder
from ..nn import inference
from ..numerics import Tensor
from ..rng import stream

KINDS = ("raw", "vgg", "kd")


def dihedral(a, k):
    """The k-th of the 8 symmetries of the square, applied to the first two axes."""
    r = np.rot90(a, k % 4, axes=(0, 1))
    return np.ascontiguousarray(r[:, ::-1] if k >= 4 else r)


def band_stats(images):
    px = np.concatenate([np.asarray(im, dtype=np.float64).reshape(-1, im.shape[-1]) for im in images])
    sd = px.std(axis=0)
    return px.mean(axis=0), np.where(sd > 0, sd, 1.0)


def standardise_bands(images, mean, std):
    """(H, W, C) images -> (N, C, H, W) standardised array."""
    arr = np.stack([(np.asarray(im, dtype=np.float64) - mean) / std for im in images])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def coder_taps(coder: Coder, x):
    """relu1_1 and upsampled relu2_1 of a (N, C, H, W) batch, stacked on channels."""
    h, w = x.shape[2:]
    with inference(coder):
        t1, t2 = (t.data for t in coder.encode(Tensor(x), 2))
    up = t2.repeat(2, axis=2).repeat(2, axis=3)[:, :, :h, :w]
    return np.concatenate([t1, up], axis=1)


@dataclass
class Extractor:
    kind: str
    band_mean: np.ndarray
    band_std: np.ndarray
    coder: Coder | None = None
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None

    @property
    def channels(self):
        if self.kind == "raw":
            return self.band_mean.size
        return self.coder.widths[0] + self.coder.widths[1]

    def _raw_features(self, images):
        x = standardise_bands(images, self.band_mean, self.band_std)
        return x if self.kind == "raw" else coder_taps(self.coder, x)

    def fit(self, images):
        if self.kind != "raw":
            f = self._raw_features(images)
            self.feat_mean = f.mean(axis=(0, 2, 3))
            sd = f.std(axis=(0, 2, 3))
            self.feat_std = np.where(sd > 1e-12, sd, 1.0)
        return self

    def __call__(self, images):
        """(H, W, C) images -> (N, channels, H, W) conditioning."""
        f = self._raw_features(images)
        if self.kind != "raw":
            f = (f - self.feat_mean[None, :, None, None]) / self.feat_std[None, :, None, None]
        return f

    def to_blobs(self):
        blobs = {"cond/kind": np.array([KINDS.index(self.kind)], dtype=np.float64),
                 "cond/band_mean": self.band_mean, "cond/band_std": self.band_std}
        if self.kind != "raw":
            blobs["cond/widths"] = np.array(self.coder.widths, dtype=np.float64)
            blobs["cond/feat_mean"] = self.feat_mean
            blobs["cond/feat_std"] = self.feat_std
            blobs.update({f"coder/{k}": v for k, v in self.coder.state_dict().items()})
        return blobs

    @classmethod
    def from_blobs(cls, blobs):
        kind = KINDS[int(blobs["cond/kind"][0])]
        ex = cls(kind, blobs["cond/band_mean"].astype(np.float64), blobs["cond/band_std"].astype(np.float64))
        if kind != "raw":
            widths = tuple(int(c) for c in blobs["cond/widths"])
            ex.coder = Coder(widths, ex.band_mean.size, stream(0, "coder/skeleton"))
            ex.coder.load_state_dict({k[6:]: v for k, v in blobs.items() if k.startswith("coder/")})
            ex.coder.freeze()
            ex.feat_mean = blobs["cond/feat_mean"].astype(np.float64)
            ex.feat_std = blobs["cond/feat_std"].astype(np.float64)
        return ex


def make_extractor(kind, train_images, coder=None):
    """Build and fit an extractor on the (already augmented) training images.

    The fitted extractor is round-tripped through its blobs so in-memory use
    matches a reload from disk exactly.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown extractor {kind!r}")
    if kind != "raw" and coder is None:
        raise ValueError(f"extractor {kind!r} needs a coder")
    mean, std = band_stats(train_images)
    ex = Extractor(kind, mean, std, coder).fit(train_images)
    f32 = {k: np.asarray(v, dtype=np.float32) for k, v in ex.to_blobs().items()}
    return Extractor.from_blobs(f32)
