"""Survey volume to carbon storage, and carbon storage to per-pixel density.

Storage follows ``C = factor * delta * rho * gamma * V`` with ``V = V_ha * area``.
Each patch's storage is spread over its pixels with canopy-height weights that
sum to one, so the per-patch total is conserved exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .raster import PatchTable, Raster, forest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CarbonParams:
    delta: float = 1.90   # volume expansion coefficient
    rho: float = 0.5      # bulk density, t/m^3
    gamma: float = 0.5    # carbon content rate
    factor: float = 2.439  # leading constant, kept as given

    def __post_init__(self):
        if min(self.delta, self.rho, self.gamma, self.factor) <= 0:
            raise ValueError("carbon parameters must be positive")
        if self.gamma > 1:
            raise ValueError("carbon content rate gamma must be <= 1")


@dataclass
class DensityMap:
    cd: Raster           # Mg per pixel, f32
    provenance: np.ndarray  # (H, W) patch id per pixel, 0 where no carbon was assigned


def accumulated_volume(v_ha, area):
    """Stand volume in m^3 from volume per hectare and patch area in ha."""
    if np.any(np.asarray(v_ha) < 0):
        raise ValueError("v_ha must be non-negative")
    if np.any(np.asarray(area) <= 0):
        raise ValueError("area must be positive")
    return v_ha * area


def carbon_storage(v, p: CarbonParams = CarbonParams()):
    if np.any(np.asarray(v) < 0):
        raise ValueError("volume must be non-negative")
    return p.factor * (p.delta * p.rho * p.gamma * v)


def canopy_weights(canopy):
    """Normalised weights for the canopy heights of one patch.

    Falls back to uniform weights when the patch has no canopy at all.
    """
    h = np.asarray(canopy, dtype=np.float64).ravel()
    if h.size == 0:
        raise ValueError("empty patch")
    if np.any(h < 0):
        raise ValueError("canopy heights must be non-negative")
    total = h.sum()
    if total == 0:
        return np.full(h.size, 1.0 / h.size)
    return h / total


def carbon_density_map(patches: PatchTable, canopy: Raster, mask: Raster,
                       p: CarbonParams = CarbonParams()) -> DensityMap:
    is_forest = forest(mask)
    heights = canopy.band.astype(np.float64)
    if heights.shape != patches.patch_map.shape or is_forest.shape != heights.shape:
        raise ValueError("patch map, canopy and mask must be aligned")
    cd = np.zeros(heights.shape, dtype=np.float64)
    prov = np.zeros(heights.shape, dtype=np.uint32)
    for pid, v_ha, area in zip(patches.ids, patches.v_ha, patches.area_ha):
        rows, cols = patches.pixels(pid)
        keep = is_forest[rows, cols]
        if not keep.all():
            log.warning("patch %d: %d of %d pixels fall outside the forest mask and are dropped",
                        pid, int((~keep).sum()), keep.size)
            rows, cols = rows[keep], cols[keep]
        if rows.size == 0:
            continue
        c = carbon_storage(accumulated_volume(v_ha, area), p)
        cd[rows, cols] = c * canopy_weights(heights[rows, cols])
        prov[rows, cols] = pid
    return DensityMap(cd=Raster(cd.astype(np.float32)), provenance=prov)


def patch_totals(dm: DensityMap, table: PatchTable) -> np.ndarray:
    """Sum of the stored density over each patch, in table order (float64)."""
    cd = dm.cd.band.astype(np.float64)
    return np.array([cd[dm.provenance == pid].sum() for pid in table.ids])
