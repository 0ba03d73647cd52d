"""Seeded, counter-based random streams.

Every Monte Carlo routine splits its trials into fixed-size chunks and gives
chunk ``i`` the stream ``derive_substream(seed, i)``. Results therefore do not
depend on how many workers evaluate the chunks.
"""

import numpy as np

CHUNK_SIZE = 1 << 16


def derive_substream(seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, index)``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(trials: int, chunk_size: int = CHUNK_SIZE) -> list[int]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    full, rest = divmod(trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def child_seed(seed: int, index: int) -> int:
    """A 64-bit seed for sub-experiment ``index`` (e.g. one market instance)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(index), 1))
    return int(ss.generate_state(1, np.uint64)[0])
