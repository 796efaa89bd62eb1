"""Seeded synthetic scenes standing in for imagery, canopy and survey data.

Generation law, per scene:

* a smooth "site quality" field drives canopy height and stand volume;
* forest/non-forest comes from a second smooth field (about 30% non-forest);
* patches are Voronoi cells of seed pixels drawn inside the forest;
* the truth density is the carbon-density map of those patches;
* each of the 4 bands is ``a_k * sat(d) + b_k`` plus band-specific smooth
  noise and white noise at roughly 10 dB SNR, where ``sat(d) = 1 -
  exp(-d / d0)`` saturates. Non-forest pixels carry a spectrally similar
  "vegetation" signal from a decoy density, so imagery alone does not reveal
  the mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .carbon import CarbonParams, carbon_density_map
from .raster import FOREST, PIXEL_AREA_HA, PatchTable, Raster
from .rng import stream

BAND_GAIN = np.array([0.8, -0.5, 1.2, 0.6])
BAND_OFFSET = np.array([0.1, 0.5, 0.2, 0.3])
SNR_DB = 10.0
SATURATION = 0.5  # d0 as a fraction of the median forest density


@dataclass
class SyntheticScene:
    imagery: Raster      # f32, 4 bands
    canopy: Raster       # f32, metres
    mask: Raster         # u8 {0, 255}
    patches: PatchTable
    truth_density: Raster  # f32, Mg per pixel


def smooth_field(rng, h, w, sigma):
    """Zero-mean, unit-variance Gaussian random field."""
    f = gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return (f - f.mean()) / f.std()


def saturate(d, d0):
    return 1.0 - np.exp(-d / d0)


def gen_synthetic_scene(seed: int, h: int, w: int, n_patches: int,
                        params: CarbonParams = CarbonParams()) -> SyntheticScene:
    if h < 16 or w < 16:
        raise ValueError(f"scene must be at least 16x16, got {h}x{w}")
    if n_patches < 1:
        raise ValueError("need at least one patch")
    sigma = max(h, w) / 10.0

    quality = smooth_field(stream(seed, "scene/quality"), h, w, sigma)
    cover = smooth_field(stream(seed, "scene/cover"), h, w, sigma * 1.5)
    is_forest = cover > np.quantile(cover, 0.3)
    mask = np.where(is_forest, FOREST, 0).astype(np.uint8)

    rng = stream(seed, "scene/canopy")
    canopy = 15.0 + 7.0 * quality + 2.0 * rng.standard_normal((h, w))
    canopy = np.where(is_forest, np.clip(canopy, 1.0, None), 0.0)

    forest_px = np.flatnonzero(is_forest)
    if forest_px.size < n_patches:
        raise ValueError(f"only {forest_px.size} forest pixels for {n_patches} patches")
    seeds = stream(seed, "scene/voronoi").choice(forest_px, size=n_patches, replace=False)
    sr, sc = np.divmod(seeds, w)
    rr, cc = np.mgrid[0:h, 0:w]
    d2 = (rr[..., None] - sr) ** 2 + (cc[..., None] - sc) ** 2
    nearest = np.argmin(d2, axis=-1)
    patch_map = np.where(is_forest, nearest + 1, 0).astype(np.uint32)

    ids = np.arange(1, n_patches + 1, dtype=np.uint32)
    counts = np.bincount(patch_map.ravel(), minlength=n_patches + 1)[1:]
    q_sum = np.bincount(patch_map.ravel(), weights=quality.ravel(), minlength=n_patches + 1)[1:]
    q_mean = q_sum / counts
    v_noise = stream(seed, "scene/volume").normal(0.0, 15.0, n_patches)
    v_ha = np.clip(150.0 + 70.0 * q_mean + v_noise, 10.0, None)
    table = PatchTable(patch_map, ids, v_ha, counts * PIXEL_AREA_HA)

    canopy_r = Raster(canopy.astype(np.float32))
    mask_r = Raster(mask)
    density = carbon_density_map(table, canopy_r, mask_r, params).cd.band.astype(np.float64)

    d0 = float(np.median(density[is_forest])) * SATURATION
    decoy = np.quantile(density[is_forest], 0.5) * np.exp(
        0.6 * smooth_field(stream(seed, "scene/decoy"), h, w, sigma))
    signal_density = np.where(is_forest, density, decoy)
    signal = saturate(signal_density, d0)
    noise_sd = np.abs(BAND_GAIN) * signal[is_forest].std() / np.sqrt(10 ** (SNR_DB / 10.0))
    bands = []
    for k in range(4):
        rng = stream(seed, f"scene/band{k}")
        smooth = smooth_field(rng, h, w, sigma / 2)
        white = rng.standard_normal((h, w))
        noise = noise_sd[k] * (0.6 * smooth + 0.8 * white)
        bands.append(BAND_GAIN[k] * signal + BAND_OFFSET[k] + noise)
    imagery = np.stack(bands, axis=-1).astype(np.float32)

    return SyntheticScene(
        imagery=Raster(imagery),
        canopy=canopy_r,
        mask=mask_r,
        patches=table,
        truth_density=Raster(density.astype(np.float32)),
    )
