"""
Thread-pool helpers for the numeric kernels.

Work is always split into contiguous chunks of independent output
elements, and every chunk is computed the same way whatever the worker
count, so results are bit-identical across --threads settings.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple, TypeVar

from app.core.config import resolve_threads

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Shared process-wide worker count, set by the CLI from --threads
_workers = 0


def set_workers(count: int) -> int:
    """Set the worker count used by kernels (0 = settings / CPU count)."""
    global _workers
    _workers = resolve_threads(count)
    logger.debug(f"Kernel workers set to {_workers}")
    return _workers


def get_workers() -> int:
    """Current worker count."""
    return _workers or resolve_threads(0)


def chunk_bounds(total: int, chunks: int) -> List[Tuple[int, int]]:
    """Split range(total) into at most `chunks` contiguous (start, stop) pairs."""
    chunks = max(1, min(chunks, total))
    step, extra = divmod(total, chunks)
    bounds = []
    start = 0
    for i in range(chunks):
        stop = start + step + (1 if i < extra else 0)
        if stop > start:
            bounds.append((start, stop))
        start = stop
    return bounds


def map_chunks(fn: Callable[[int, int], T], total: int, workers: int = 0) -> List[T]:
    """
    Apply fn(start, stop) over contiguous chunks of range(total).

    Results come back in chunk order. Chunking granularity is fixed by the
    worker count only through how rows are grouped; each output row is
    produced by one call, so concatenated results do not depend on it.
    """
    workers = workers or get_workers()
    bounds = chunk_bounds(total, workers)
    if len(bounds) <= 1:
        return [fn(start, stop) for start, stop in bounds]
    with ThreadPoolExecutor(max_workers=len(bounds)) as ex:
        return list(ex.map(lambda b: fn(*b), bounds))


def map_items(fn: Callable[[T], object], items: Sequence[T], workers: int = 0) -> list:
    """Apply fn to independent items, preserving order."""
    workers = workers or get_workers()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))
