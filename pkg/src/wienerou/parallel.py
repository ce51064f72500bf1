"""Chunked path-parallel execution with order-independent results.

Work is split into chunks of a fixed size that does not depend on the
worker count, each chunk is evaluated independently and the results are
returned in chunk order.  Since every random number is a pure function of
``(seed, path_id, stream, counter)``, the output is bit-identical for any
number of workers.  The numerical kernels release the GIL, so threads are
enough.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_CHUNK = 256


def chunk_ranges(n_items, chunk_size=DEFAULT_CHUNK):
    """``[(start, stop), ...]`` covering ``range(n_items)``."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    return [(a, min(a + chunk_size, n_items)) for a in range(0, n_items, chunk_size)]


def map_chunks(fn, n_items, workers=1, chunk_size=DEFAULT_CHUNK):
    """Evaluate ``fn(start, stop)`` on every chunk; results in chunk order."""
    ranges = chunk_ranges(n_items, chunk_size)
    if workers <= 1 or len(ranges) <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), ranges))


def map_paths(fn, n_items, workers=1, chunk_size=DEFAULT_CHUNK):
    """Like :func:`map_chunks` with ``fn(path_ids)`` and results stacked on axis 0."""
    parts = map_chunks(
        lambda a, b: fn(np.arange(a, b, dtype=np.uint64)), n_items, workers, chunk_size)
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(col) for col in zip(*parts))
    return np.concatenate(parts)


def ordered_sum(parts):
    """Sum partial accumulators in the given (chunk) order."""
    total = None
    for p in parts:
        total = p.copy() if total is None else total + p
    return total


def accumulate(fn, n_items, workers=1, chunk_size=DEFAULT_CHUNK):
    """Sum per-chunk accumulators ``fn(path_ids)`` in chunk order.

    ``fn`` may return an array or a tuple of arrays.
    """
    parts = map_chunks(
        lambda a, b: fn(np.arange(a, b, dtype=np.uint64)), n_items, workers, chunk_size)
    if isinstance(parts[0], tuple):
        return tuple(ordered_sum(col) for col in zip(*parts))
    return ordered_sum(parts)
