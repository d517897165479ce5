"""Deterministic ordered parallel map used by sweeps and Monte Carlo blocks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
U = TypeVar("U")

THREADS_ENV = "QRESET_THREADS"


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], U], items: Iterable[T], threads: int | None = None) -> list[U]:
    """``[fn(x) for x in items]``, possibly concurrent; output order always matches input order."""
    items = list(items)
    n = default_threads() if not threads else threads
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
