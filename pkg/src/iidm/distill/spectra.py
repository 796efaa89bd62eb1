"""Per-image feature spectra and mean cumulative explained variance."""
from __future__ import annotations

import numpy as np

from ..numerics import eigh_sym
from .eigenbasis import center_features


def image_spectrum(f):
    """Descending covariance eigenvalues of one (C, P) feature matrix.

    When P < C the nonzero spectrum is taken from the P x P Gram matrix and
    padded with zeros, which is exact and far cheaper.
    """
    fbar = center_features(f)
    c, p = fbar.shape
    if p < c:
        lam = eigh_sym(fbar.T @ fbar / p).eigenvalues
        lam = np.concatenate([lam, np.zeros(c - p)])
    else:
        lam = eigh_sym(fbar @ fbar.T / p).eigenvalues
    lam = np.where(lam < 0, 0.0, lam)
    return lam


def spectra_from_features(per_layer):
    """{layer: [ (C, P) per image ]} -> {layer: (M, C) eigenvalue array}."""
    return {n: np.stack([image_spectrum(f) for f in feats]) for n, feats in per_layer.items()}


def cev_table(spectrum_rows):
    """Cumulative explained variance per image; last column is exactly 1."""
    s = np.asarray(spectrum_rows, dtype=np.float64)
    cum = np.cumsum(s, axis=1)
    total = cum[:, -1:]
    flat = np.arange(1, s.shape[1] + 1) / s.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, cum / np.where(total > 0, total, 1.0), flat)
    out[:, -1] = 1.0
    return out


def mcev_curve(spectra, layer):
    rows = spectra.get(layer)
    if rows is None or len(rows) == 0:
        raise ValueError(f"no spectra for layer {layer}")
    return cev_table(rows).mean(axis=0)


def mcev(spectra, layer, c_prime):
    curve = mcev_curve(spectra, layer)
    if not 1 <= c_prime <= curve.size:
        raise ValueError(f"c_prime must lie in [1, {curve.size}]")
    return float(curve[c_prime - 1])


def smallest_reaching(curve, target):
    hits = np.flatnonzero(curve >= target)
    return int(hits[0]) + 1 if hits.size else int(curve.size)


def select_channel_lengths(spectra, target=0.85, double_first=True):
    """Smallest channel count per layer with mCEV >= target; relu1 count doubled."""
    out = [smallest_reaching(mcev_curve(spectra, n), target) for n in (1, 2, 3, 4)]
    if double_first:
        c1_full = np.asarray(spectra[1]).shape[1]
        out[0] = min(2 * out[0], c1_full)
    return tuple(out)

