"""Named random streams derived from one master seed.

Every stochastic feature draws from its own child stream, so switching one
feature on never shifts the draws seen by another.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(master_seed: int, *names: str | int) -> np.random.Generator:
    """Return an independent generator keyed by ``(master_seed, *names)``.

    Names are hashed with CRC32 so the mapping is stable across processes
    and Python versions (``hash()`` is salted).
    """
    key = [zlib.crc32(n.encode()) if isinstance(n, str) else int(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))
