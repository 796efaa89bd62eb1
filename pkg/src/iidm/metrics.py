"""Masked MAE, MSE, RMSE, PSNR and SSIM for density rasters.

Masks follow the forest convention: a pixel is included where the mask is
255 (or True for boolean masks). PSNR of identical inputs is ``PSNR_INF``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import FOREST, Raster

PSNR_INF = math.inf
CSV_COLUMNS = ("run_id", "mae", "mse", "rmse", "psnr", "ssim", "n_pixels")


def _plane(x):
    if isinstance(x, Raster):
        x = x.band
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim != 2:
        raise ValueError(f"expected a single-band (H, W) raster, got shape {x.shape}")
    return x


def _included(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = _plane(mask) if isinstance(mask, Raster) else np.asarray(mask)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} != raster shape {shape}")
    return m == FOREST if m.dtype != bool else m


def _pair(pred, truth, mask):
    p, t = _plane(pred), _plane(truth)
    if p.shape != t.shape:
        raise ValueError(f"pred {p.shape} and truth {t.shape} differ in shape")
    inc = _included(mask, p.shape)
    if not inc.any():
        raise ValueError("mask selects no pixels")
    return p, t, inc


def pixel_metrics(pred, truth, mask=None):
    """(mae, mse, rmse) over the included pixels."""
    p, t, inc = _pair(pred, truth, mask)
    r = p[inc] - t[inc]
    mse = float(np.mean(r * r))
    return float(np.mean(np.abs(r))), mse, math.sqrt(mse)


def default_max(truth, mask=None):
    t = _plane(truth)
    return float(t[_included(mask, t.shape)].max())


def psnr(pred, truth, max_val=None, mask=None):
    """10 log10(MAX^2 / MSE); ``PSNR_INF`` when MSE is 0."""
    if max_val is None:
        max_val = default_max(truth, mask)
    if not max_val > 0:
        raise ValueError(f"max_val must be positive, got {max_val}")
    _, mse, _ = pixel_metrics(pred, truth, mask)
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(max_val * max_val / mse)


def ssim_terms(x, y, c1, c2):
    """Two-factor SSIM of two pixel vectors (c3 = c2/2 folded in)."""
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy, cov = np.mean(dx * dx), np.mean(dy * dy), np.mean(dx * dy)
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def windows(shape, size):
    """Non-overlapping tiles; edge tiles are clipped to the raster."""
    h, w = shape
    for r in range(0, h, size):
        for c in range(0, w, size):
            yield slice(r, min(r + size, h)), slice(c, min(c + size, w))


def ssim(pred, truth, k1=0.01, k2=0.03, L=None, window=8, mask=None):
    """Mean SSIM over ``window x window`` tiles, or one global window with ``window="global"``.

    Only included pixels enter a tile's statistics; tiles without any are
    skipped. ``L`` defaults to the truth maximum over included pixels.
    """
    p, t, inc = _pair(pred, truth, mask)
    if L is None:
        L = float(t[inc].max()) or 1.0
    if not L > 0:
        raise ValueError(f"dynamic range L must be positive, got {L}")
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    if window == "global":
        return float(ssim_terms(p[inc], t[inc], c1, c2))
    size = int(window)
    if size < 1 or size > p.shape[0] or size > p.shape[1]:
        raise ValueError(f"window {size} does not fit a {p.shape[0]}x{p.shape[1]} raster")
    vals = []
    for rs, cs in windows(p.shape, size):
        m = inc[rs, cs]
        if m.any():
            vals.append(ssim_terms(p[rs, cs][m], t[rs, cs][m], c1, c2))
    return float(np.mean(vals))


@dataclass
class MetricReport:
    mae: float
    mse: float
    rmse: float
    psnr: float
    ssim: float
    n_pixels: int
    mask_applied: bool

    def csv_row(self, run_id):
        return [run_id, repr(self.mae), repr(self.mse), repr(self.rmse),
                "inf" if self.psnr == PSNR_INF else repr(self.psnr), repr(self.ssim), str(self.n_pixels)]


def evaluate(pred, truth, mask=None, max_val=None, window=8):
    mae, mse, rmse = pixel_metrics(pred, truth, mask)
    t = _plane(truth)
    n = int(_included(mask, t.shape).sum())
    return MetricReport(mae, mse, rmse, psnr(pred, truth, max_val, mask),
                        ssim(pred, truth, window=window, mask=mask), n, mask is not None)
