"""
Helper functions for seeding and per-video parallelism
"""

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def stream_key(name: str) -> int:
    """Stable 32-bit key for a stream name (Python's hash() is salted per process)"""
    return zlib.crc32(name.encode("utf-8"))


def rng_stream(seed: int, *names) -> np.random.Generator:
    """
    Independent counter-based generator for the named stream.

    Every random draw in the pipeline goes through one of these, keyed by
    what it is for ("synth", "video", 17), so adding or reordering streams
    never shifts another stream's numbers.
    """
    keys = tuple(stream_key(n) if isinstance(n, str) else int(n) for n in names)
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=keys)
    return np.random.Generator(np.random.Philox(sequence))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Map in input order, on up to `threads` worker threads"""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
