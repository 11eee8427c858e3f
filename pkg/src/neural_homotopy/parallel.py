"""Worker-count control with results independent of the worker count.

Torch's intra-op thread pool splits reductions differently for different thread
counts, which changes the last bits of sums. Numeric kernels therefore run with
one intra-op thread, and extra workers only process fixed-size chunks whose
results are concatenated in order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import torch

_workers = 1


def set_workers(n: int) -> None:
    global _workers
    if n < 1:
        raise ValueError("worker count must be at least 1")
    _workers = int(n)


def get_workers() -> int:
    return _workers


@contextmanager
def single_threaded():
    old = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(old)


def map_chunks(fn, n: int, chunk: int) -> list:
    """``[fn(start, stop) for each chunk]`` in order, spread over the configured workers."""
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    with single_threaded():
        if _workers == 1 or len(bounds) < 2:
            return [fn(a, b) for a, b in bounds]
        with ThreadPoolExecutor(_workers) as pool:
            return list(pool.map(lambda ab: fn(*ab), bounds))
