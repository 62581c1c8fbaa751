"""
Deterministic generator streams.

Every replicate owns a ``numpy.random.Generator`` whose seed is derived from
the root seed, a cell identifier and the replicate index, so results do not
depend on how a sweep is sliced across workers.
"""
import hashlib

import numpy as np

SEED_BITS = 64


def replicate_seed(root: int, cell_id: str, replicate: int) -> int:
    """hash64(root, cell-id, r): first 8 bytes of BLAKE2b, little-endian."""
    key = f"{int(root)}:{cell_id}:{int(replicate)}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=SEED_BITS // 8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def child_rng(rng: np.random.Generator) -> np.random.Generator:
    """Independent generator drawn from ``rng``."""
    return np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
