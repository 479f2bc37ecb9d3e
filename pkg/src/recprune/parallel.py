"""Deterministic fan-out of independent trials."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def run_trials(fn, keys, threads: int = 1):
    """Apply ``fn`` to every key; results come back sorted by key.

    numpy releases the GIL inside its kernels, so threads give real overlap
    for the array-heavy trials used here. Each trial owns its state.
    """
    keys = sorted(keys)
    if threads <= 1 or len(keys) <= 1:
        return [(k, fn(k)) for k in keys]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(fn, keys))
    return list(zip(keys, results))
