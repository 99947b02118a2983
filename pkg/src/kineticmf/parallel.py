"""Deterministic worker-pool helpers.

Work is always split into fixed tiles whose boundaries do not depend on the
worker count, every tile writes a disjoint output slice, and results are
assembled in tile order.  Consequently the same inputs produce bit-identical
outputs for any number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def map_ordered(fn, items, workers: int = 1) -> list:
    """Apply ``fn`` over ``items`` and return results in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def tile_ranges(n: int, tile: int) -> list[tuple[int, int]]:
    """Fixed [start, stop) tiles covering range(n); independent of worker count."""
    if tile < 1:
        raise ValueError("tile must be >= 1")
    return [(i, min(i + tile, n)) for i in range(0, n, tile)]
