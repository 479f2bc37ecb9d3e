"""Counter-based random streams keyed by (experiment, seed, trial...).

Every stream is ``numpy.random.Generator(Philox)`` (Philox4x64-10) whose key
comes from a ``SeedSequence`` over ``[crc32(experiment), seed, *trial]``.
Streams for different keys are independent, so parallel trials never share or
reorder draws.
"""

from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "numpy Philox4x64-10 via SeedSequence([crc32(name), seed, *trial])"


def stream(experiment: str, seed: int, *trial: int) -> np.random.Generator:
    if seed < 0 or any(t < 0 for t in trial):
        raise ValueError("seed and trial indices must be non-negative")
    key = [zlib.crc32(experiment.encode("utf-8")), int(seed), *map(int, trial)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
