"""Order-preserving parallel map over worker processes.

Results always come back in input order, so reductions over them are
independent of worker scheduling.
"""

from collections.abc import Callable, Sequence
from typing import Any

import anyio
import anyio.to_process
from loguru import logger


def _apply_chunk(fn: Callable[[Any], Any], chunk: Sequence[Any]) -> list[Any]:
    return [fn(item) for item in chunk]


def _chunks(items: Sequence[Any], jobs: int) -> list[Sequence[Any]]:
    size = max(1, -(-len(items) // (jobs * 4)))
    return [items[start : start + size] for start in range(0, len(items), size)]


async def amap(fn: Callable[[Any], Any], items: Sequence[Any], jobs: int) -> list[Any]:
    """Apply ``fn`` to every item in up to ``jobs`` worker processes.

    ``fn`` must be a module-level callable and items must be picklable.

    Returns:
        Results in the order of ``items``.

    """
    chunks = _chunks(items, jobs)
    results: list[list[Any]] = [[] for _ in chunks]
    limiter = anyio.CapacityLimiter(jobs)

    async def run(index: int, chunk: Sequence[Any]) -> None:
        results[index] = await anyio.to_process.run_sync(
            _apply_chunk, fn, chunk, limiter=limiter
        )

    async with anyio.create_task_group() as tg:
        for index, chunk in enumerate(chunks):
            tg.start_soon(run, index, chunk)
    return [value for chunk_result in results for value in chunk_result]


def parallel_map(
    fn: Callable[[Any], Any], items: Sequence[Any], jobs: int = 1
) -> list[Any]:
    """Synchronous front end to :func:`amap`; runs in-process when ``jobs`` is 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Dispatching {len(items)} items to {jobs} worker processes")
    return anyio.run(amap, fn, items, jobs)
