"""Ordered parallel map.

Results always come back in input order and callers reduce them sequentially,
so the number of worker threads never changes a floating-point result.  BLAS
is pinned to one thread while workers run; numpy releases the GIL inside
matrix products, which is where the parallel speed-up comes from.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

_threads = 1


def set_threads(n: int):
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def ordered_map(fn, items, threads=None):
    items = list(items)
    n = get_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def pin_blas():
    """Context manager forcing single-threaded BLAS for bit-reproducible products."""
    return threadpool_limits(limits=1)


def tree_sum(parts):
    """Left-to-right sum of gradient dicts."""
    total = {k: v.copy() for k, v in parts[0].items()}
    for part in parts[1:]:
        for k, v in part.items():
            total[k] += v
    return total
