"""Replicate seeds derived from one master seed.

Replicate ``i`` always gets the i-th child of ``SeedSequence(master)``, so
results do not depend on how replicates are spread over workers.
"""
from __future__ import annotations

import secrets
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def random_master_seed() -> int:
    return secrets.randbits(63)


def replicate_sequences(master: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master).spawn(n)


def replicate_seed(master: int, i: int) -> np.random.SeedSequence:
    """Child i of the master sequence, built directly from its spawn key."""
    return np.random.SeedSequence(master, spawn_key=(i,))


def seed_fingerprints(master: int, n: int) -> np.ndarray:
    """64-bit fingerprint of each replicate seed, used for collision scans."""
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = replicate_seed(master, i).generate_state(1, np.uint64)[0]
    return out


def generator(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seq))


def map_replicates(fn: Callable, args: Sequence, workers: int = 1) -> list:
    """Apply ``fn`` to every item; results come back in input order."""
    if workers <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, args, chunksize=max(1, len(args) // (4 * workers))))
