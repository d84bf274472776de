"""Order-preserving map over sample indices, serial or with worker processes.

Work is partitioned by index only, so the result never depends on the
number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return max(1, os.cpu_count() or 1)
    return int(threads)


def _run_chunk(args):
    func, chunk = args
    return [func(item) for item in chunk]


def pmap(func: Callable[[T], R], items: Sequence[T], threads: int | None = 1,
         chunksize: int = 256) -> list[R]:
    """``[func(i) for i in items]``, optionally across processes.

    ``func`` must be picklable (a module-level function or a
    ``functools.partial`` of one) when ``threads > 1``.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= chunksize:
        return [func(item) for item in items]
    chunks = [items[i:i + chunksize] for i in range(0, len(items), chunksize)]
    out: list[R] = []
    with ProcessPoolExecutor(max_workers=threads) as ex:
        for part in ex.map(_run_chunk, [(func, c) for c in chunks]):
            out.extend(part)
    return out
