"""Seed derivation: every generator in a run descends from one root seed."""
import zlib

import numpy as np

DEFAULT_SEED = 20250701


def derive_seed(root: int, *path) -> np.random.SeedSequence:
    """Deterministic child seed for ``(root, *path)``; strings are hashed with CRC32."""
    words = [int(root) & 0xFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        else:
            words.append(int(part) & 0xFFFFFFFF)
    return np.random.SeedSequence(words)


def derive_rng(root: int, *path) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *path))
