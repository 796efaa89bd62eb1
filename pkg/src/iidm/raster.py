"""RAS1 raster container, forest masks, and survey patch tables.

RAS1 layout (all integers little-endian)::

    0   4s   magic "RAS1"
    4   u32  height
    8   u32  width
    12  u32  channels
    16  u8   dtype code (0 = f32, 1 = u8, 2 = u32)
    17  u8   has_mask
    18  3x   reserved, zero
    21       payload, row-major, band-interleaved-by-pixel
             [optional] height*width mask bytes (1 = nodata)
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RAS1"
HEADER = struct.Struct("<4sIIIBB3x")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<u4")}
CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1, np.dtype("uint32"): 2}

FOREST = 255
PIXEL_AREA_HA = 16.0 * 16.0 / 10_000.0


class FormatError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


@dataclass
class Raster:
    """H x W x C grid; ``data`` is stored with shape (H, W, C)."""

    data: np.ndarray
    nodata_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"raster data must be (H, W, C), got {self.data.shape}")
        if self.data.dtype not in CODES:
            raise ValueError(f"unsupported raster dtype {self.data.dtype}")
        if self.nodata_mask is not None:
            self.nodata_mask = np.asarray(self.nodata_mask, dtype=bool)
            if self.nodata_mask.shape != self.data.shape[:2]:
                raise ValueError("nodata_mask shape must equal (H, W)")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def band(self):
        """The single band of a one-channel raster as an (H, W) view."""
        if self.channels != 1:
            raise ValueError(f"raster has {self.channels} channels, expected 1")
        return self.data[:, :, 0]

    @classmethod
    def f32(cls, arr, nodata_mask=None):
        return cls(np.asarray(arr, dtype=np.float32), nodata_mask)


def encode_raster(r: Raster) -> bytes:
    code = CODES[r.data.dtype]
    has_mask = r.nodata_mask is not None
    out = [HEADER.pack(MAGIC, r.height, r.width, r.channels, code, int(has_mask)),
           np.ascontiguousarray(r.data, dtype=DTYPES[code]).tobytes()]
    if has_mask:
        out.append(r.nodata_mask.astype(np.uint8).tobytes())
    return b"".join(out)


def decode_raster(buf: bytes) -> Raster:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'RAS1'", 0)
    if len(buf) < HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, h, w, c, code, has_mask = HEADER.unpack_from(buf)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", 16)
    if has_mask not in (0, 1):
        raise FormatError(f"has_mask flag must be 0 or 1, got {has_mask}", 17)
    if buf[18:21] != b"\0\0\0":
        raise FormatError("reserved header bytes must be zero", 18)
    dt = DTYPES[code]
    n = h * w * c * dt.itemsize
    end = HEADER.size + n + (h * w if has_mask else 0)
    if len(buf) < end:
        raise FormatError(f"truncated payload: need {end} bytes, have {len(buf)}", len(buf))
    if len(buf) > end:
        raise FormatError("trailing bytes after payload", end)
    data = np.frombuffer(buf, dtype=dt, count=h * w * c, offset=HEADER.size).reshape(h, w, c)
    data = data.astype(dt.newbyteorder("="), copy=True)
    mask = None
    if has_mask:
        raw = np.frombuffer(buf, dtype=np.uint8, count=h * w, offset=HEADER.size + n)
        if np.any(raw > 1):
            raise FormatError("mask bytes must be 0 or 1", HEADER.size + n + int(np.argmax(raw > 1)))
        mask = raw.reshape(h, w).astype(bool)
    return Raster(data, mask)


def write_raster(r: Raster, path) -> None:
    Path(path).write_bytes(encode_raster(r))


def read_raster(path) -> Raster:
    return decode_raster(Path(path).read_bytes())


def binarize_mask(r: Raster, threshold: float) -> Raster:
    """255 where the single band is >= threshold, else 0."""
    if r.channels != 1:
        raise ValueError("binarize_mask needs a single-channel raster")
    return Raster(np.where(r.data >= threshold, FOREST, 0).astype(np.uint8))


def forest(mask: Raster | np.ndarray) -> np.ndarray:
    """Boolean (H, W) forest indicator from a {0, 255} mask."""
    arr = mask.band if isinstance(mask, Raster) else np.asarray(mask)
    return arr == FOREST


@dataclass
class PatchTable:
    """Survey polygons rasterised as disjoint pixel sets.

    ``patch_map`` is (H, W) uint32 with 0 meaning no patch. ``ids``, ``v_ha``
    (m^3/ha) and ``area_ha`` are parallel arrays, one row per patch.
    """

    patch_map: np.ndarray
    ids: np.ndarray
    v_ha: np.ndarray
    area_ha: np.ndarray
    _pixels: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.patch_map = np.asarray(self.patch_map, dtype=np.uint32)
        self.ids = np.asarray(self.ids, dtype=np.uint32)
        self.v_ha = np.asarray(self.v_ha, dtype=np.float64)
        self.area_ha = np.asarray(self.area_ha, dtype=np.float64)
        if len(set(self.ids.tolist())) != len(self.ids):
            raise ValueError("duplicate patch ids")
        if np.any(self.ids == 0):
            raise ValueError("patch id 0 is reserved for 'no patch'")
        present = set(np.unique(self.patch_map).tolist()) - {0}
        missing = present - set(self.ids.tolist())
        if missing:
            raise ValueError(f"patch_map ids without table rows: {sorted(missing)[:5]}")
        if np.any(self.area_ha <= 0):
            raise ValueError("patch area must be positive")
        if np.any(self.v_ha < 0):
            raise ValueError("v_ha must be non-negative")

    def pixels(self, pid):
        """(rows, cols) of the pixels belonging to patch ``pid``."""
        if self._pixels is None:
            flat = self.patch_map.ravel()
            order = np.argsort(flat, kind="stable")
            bounds = np.searchsorted(flat[order], self.ids)
            ends = np.searchsorted(flat[order], self.ids, side="right")
            w = self.patch_map.shape[1]
            self._pixels = {int(i): divmod(order[s:e], w) for i, s, e in zip(self.ids, bounds, ends)}
        return self._pixels[int(pid)]

    def __len__(self):
        return len(self.ids)


def write_patch_csv(table: PatchTable, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["patch_id", "v_ha", "area_ha"])
        for i, v, a in zip(table.ids, table.v_ha, table.area_ha):
            wr.writerow([int(i), repr(float(v)), repr(float(a))])


def read_patch_table(csv_path, map_path) -> PatchTable:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    pmap = read_raster(map_path)
    if pmap.data.dtype != np.uint32:
        raise ValueError("patch map raster must be u32")
    return PatchTable(pmap.band, [int(r["patch_id"]) for r in rows],
                      [float(r["v_ha"]) for r in rows], [float(r["area_ha"]) for r in rows])
