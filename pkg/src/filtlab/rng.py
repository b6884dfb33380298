"""Counter-based random streams split by path block.

Paths are grouped in fixed blocks of ``BLOCK`` consecutive indices.  Every
(seed, stream name, block index) triple keys its own Philox generator, so the
numbers a path receives depend only on its global index, never on how many
paths were requested, where a chunk starts, or how many workers run.

Block draws are time-major: a generator fills arrays of shape
``(k, BLOCK)`` and consecutive calls continue the same sequence.  Callers
always draw the full block width and slice out the columns they need.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, TypeVar

import numpy as np

BLOCK = 4096

T = TypeVar("T")


def stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def block_generator(seed: int, stream: str, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(stream_id(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def block_ranges(start: int, n_paths: int) -> Iterator[tuple[int, int, int]]:
    """Yield ``(block, lo, hi)`` column ranges covering paths ``[start, start+n_paths)``."""
    stop = start + n_paths
    first, last = start // BLOCK, (stop - 1) // BLOCK
    for b in range(first, last + 1):
        lo = max(start - b * BLOCK, 0)
        hi = min(stop - b * BLOCK, BLOCK)
        yield b, lo, hi


def map_blocks(fn: Callable[[int, int, int], T], start: int, n_paths: int, workers: int = 1) -> list[T]:
    """Apply ``fn(block, lo, hi)`` to every block range; results keep block order."""
    jobs = list(block_ranges(start, n_paths))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda job: fn(*job), jobs))
    return [fn(*job) for job in jobs]


def per_path_normals(seed: int, stream: str, start: int, n_paths: int) -> np.ndarray:
    """One standard normal per path, reproducible by global path index."""
    out = [block_generator(seed, stream, b).standard_normal(BLOCK)[lo:hi] for b, lo, hi in block_ranges(start, n_paths)]
    return np.concatenate(out)


class StepNormals:
    """Sequential time-major normals for one block, drawn in step batches."""

    def __init__(self, gen: np.random.Generator, lo: int, hi: int, batch: int = 64):
        self._gen = gen
        self._lo, self._hi = lo, hi
        self._batch = batch
        self._buf = np.empty((0, hi - lo))
        self._pos = 0

    def next(self, remaining: int) -> np.ndarray:
        if self._pos == len(self._buf):
            k = min(self._batch, remaining)
            self._buf = self._gen.standard_normal((k, BLOCK))[:, self._lo:self._hi]
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return row
