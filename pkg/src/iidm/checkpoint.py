"""Named-blob checkpoint container.

Layout (little-endian)::

    magic "CKP1", u32 entry count, then per entry sorted by name:
    u16 name length, utf-8 name, u8 ndim, ndim x u32 dims, f32 payload
"""
import struct
from pathlib import Path

import numpy as np

from .raster import FormatError

MAGIC = b"CKP1"


def encode_checkpoint(blobs: dict) -> bytes:
    out = [MAGIC, struct.pack("<I", len(blobs))]
    for name in sorted(blobs):
        arr = np.asarray(blobs[name], dtype="<f4")
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> dict:
    if buf[:4] != MAGIC:
        raise FormatError("bad magic, expected b'CKP1'", 0)
    pos = 4

    def need(n):
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint", pos)

    need(4)
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    blobs = {}
    for _ in range(count):
        need(2)
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(ln + 1)
        name = buf[pos:pos + ln].decode()
        pos += ln
        ndim = buf[pos]
        pos += 1
        need(4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) * 4
        need(n)
        blobs[name] = np.frombuffer(buf, dtype="<f4", count=n // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += n
    if pos != len(buf):
        raise FormatError("trailing bytes after last entry", pos)
    return blobs


def save_checkpoint(blobs: dict, path) -> None:
    Path(path).write_bytes(encode_checkpoint(blobs))


def load_checkpoint(path) -> dict:
    return decode_checkpoint(Path(path).read_bytes())
