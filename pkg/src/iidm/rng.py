"""Named random streams derived from a single u64 seed.

Every consumer asks for a stream by purpose label, e.g. ``stream(seed,
"scene/0/field")``. Streams are Philox counter-based generators keyed by the
seed and a hash of the label, so adding a new consumer never shifts the draws
of an existing one.
"""
import hashlib

import numpy as np


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


def stream(seed: int, label: str) -> np.random.Generator:
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, label_key(label)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, label: str) -> int:
    return int(stream(seed, label).integers(0, 2**63, dtype=np.int64))
