"""Tests for the order-preserving worker-process map."""

import math

from app.parallel import _chunks, amap, parallel_map


def test_chunks_cover_items_in_order() -> None:
    items = list(range(23))
    chunks = _chunks(items, 2)

    assert [v for chunk in chunks for v in chunk] == items
    assert len(chunks) <= 8


def test_single_job_runs_in_process() -> None:
    assert parallel_map(math.factorial, [3, 4, 5]) == [6, 24, 120]
    assert parallel_map(math.factorial, []) == []


async def test_amap_preserves_order() -> None:
    """Worker scheduling never reorders results."""
    items = list(range(30))
    result = await amap(math.factorial, items, jobs=3)

    assert result == [math.factorial(v) for v in items]


def test_parallel_map_matches_serial() -> None:
    items = [7, 1, 9, 3, 5, 2]
    assert parallel_map(abs, [-v for v in items], jobs=2) == items
