from __future__ import annotations

import logging
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

from core.errors import DomainError

logger = logging.getLogger(__name__)

THREADS_ENV = "DOF_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """
    Worker count: the explicit argument, else the DOF_THREADS environment variable, else the number of cores.

    :raises DomainError: If the chosen value isn't a positive integer.
    """
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw:
            try:
                threads = int(raw)
            except ValueError as error:
                raise DomainError(f"{THREADS_ENV} must be an integer, got {raw!r}.") from error
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise DomainError(f"Thread count must be positive, got {threads}.")
    return threads


def chunk_bounds(total: int, chunk_size: int) -> list[tuple[int, int]]:
    """
    Consecutive [start, stop) ranges of at most chunk_size covering range(total). Independent of the worker count.
    """
    if chunk_size < 1:
        raise DomainError(f"chunk_size must be positive, got {chunk_size}.")
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def map_chunks[T](work: Callable[[int, int], T], total: int, chunk_size: int, threads: int) -> list[T]:
    """
    Runs work(start, stop) over every chunk and returns the results in chunk order, whatever order they finished in.
    """
    bounds = chunk_bounds(total, chunk_size)
    if threads == 1 or len(bounds) <= 1:
        return [work(start, stop) for start, stop in bounds]
    logger.debug("Dispatching %d chunks to %d threads", len(bounds), min(threads, len(bounds)))
    with ThreadPoolExecutor(max_workers=min(threads, len(bounds))) as pool:
        return list(pool.map(lambda bound: work(*bound), bounds))


def tree_reduce[T](items: Sequence[T], combine: Callable[[T, T], T]) -> T:
    """
    Pairwise reduction in a fixed order: neighbours are combined level by level, an odd last item carried up.

    The association order depends only on the number of items, so floating point sums are reproducible.

    :raises DomainError: If there is nothing to reduce.
    """
    if not items:
        raise DomainError("Cannot reduce an empty sequence.")
    level = list(items)
    while len(level) > 1:
        paired = [combine(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return level[0]
