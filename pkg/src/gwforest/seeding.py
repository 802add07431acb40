"""Deterministic random streams and order-independent parallel replicates.

Replicate work is cut into fixed-size chunks. Chunk ``i`` of a run with master
seed ``s`` always draws from ``SeedSequence(s, spawn_key=(i,))``, which is the
same stream ``SeedSequence(s).spawn(i + 1)[i]`` would give. Results are
gathered in chunk order, so the output does not depend on the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

T = TypeVar("T")

_DEFAULT_THREADS: Optional[int] = None


def set_default_threads(n: Optional[int]) -> None:
    global _DEFAULT_THREADS
    _DEFAULT_THREADS = n


def default_threads() -> int:
    if _DEFAULT_THREADS is not None:
        return max(1, int(_DEFAULT_THREADS))
    env = os.environ.get("GWFOREST_THREADS")
    return max(1, int(env)) if env else 1


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def stream(master_seed: int, *index: int) -> np.random.Generator:
    """Generator for replicate/chunk ``index`` (one or more keys) under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in index))
    return np.random.default_rng(ss)


def chunk_sizes(total: int, chunk: int) -> List[int]:
    full, rest = divmod(int(total), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn: Callable[[int, int, np.random.Generator], T], total: int, chunk: int,
               master_seed: int, threads: Optional[int] = None, prefix=()) -> List[T]:
    """Run ``fn(chunk_index, chunk_size, generator)`` over all chunks.

    ``prefix`` keys separate independent experiments sharing a master seed.
    """
    sizes = chunk_sizes(total, chunk)
    threads = default_threads() if threads is None else max(1, int(threads))

    def job(i):
        return fn(i, sizes[i], stream(master_seed, *prefix, i))

    if threads == 1 or len(sizes) <= 1:
        return [job(i) for i in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(job, range(len(sizes))))
