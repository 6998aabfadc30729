"""Seed splitting and chunked parallel execution.

Every random quantity is drawn from a substream identified by
``(master_seed, stream_id, chunk_index)``.  Work is cut into chunks of a fixed
size that does not depend on the worker count, and partial results are
reduced in chunk order, so outputs are bit-identical for any thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "FDM_LAB_THREADS"

# stream ids; fixed forever so that seeds stay reproducible across versions
STREAM_CHAIN = 1
STREAM_SGD = 2
STREAM_HB = 3
STREAM_TRAIN = 4
STREAM_SAMPLER = 5
STREAM_DATA = 6
STREAM_METRICS = 7
STREAM_INIT = 8


def substream(seed, stream_id, chunk=0):
    """Return the generator for one ``(seed, stream, chunk)`` triple."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id), int(chunk)))
    return np.random.Generator(np.random.PCG64(ss))


def worker_count(requested=None):
    """Number of worker threads, capped by ``FDM_LAB_THREADS`` when set."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, int(n))


def chunk_bounds(total, chunk_size):
    """Split ``range(total)`` into ``[(start, stop), ...]`` of ``chunk_size``."""
    return [(i, min(i + chunk_size, total)) for i in range(0, total, chunk_size)]


def map_chunks(fn, chunks, threads=None):
    """Apply ``fn(index, chunk)`` to every chunk and return results in order."""
    n = worker_count(threads)
    if n == 1 or len(chunks) == 1:
        return [fn(i, c) for i, c in enumerate(chunks)]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, range(len(chunks)), chunks))


def combine_moments(parts):
    """Merge ``(count, mean, m2)`` partials in order (Chan et al. update).

    Returns ``(count, mean, variance)`` with the population (ddof=0) variance.
    """
    n, mean, m2 = parts[0]
    mean = np.array(mean, dtype=float)
    m2 = np.array(m2, dtype=float)
    for nb, mb, m2b in parts[1:]:
        tot = n + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta**2 * (n * nb / tot)
        n = tot
    return n, mean, m2 / n
