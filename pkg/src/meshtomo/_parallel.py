"""Worker-count control and an order-preserving map over projection angles.

Results are always combined in input order, so the output does not depend
on the number of workers.
"""
import os
from concurrent.futures import ThreadPoolExecutor

_threads = 1


def set_threads(n: int) -> None:
    """Cap worker threads; 0 means one per CPU."""
    global _threads
    if n < 0:
        raise ValueError("thread count must be >= 0")
    _threads = n if n > 0 else (os.cpu_count() or 1)


def get_threads() -> int:
    return _threads


def map_ordered(fn, items, threads=None):
    items = list(items)
    n = get_threads() if threads is None else (threads or os.cpu_count() or 1)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
