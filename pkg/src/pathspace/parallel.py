"""Order-preserving map over fixed path blocks."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

DEFAULT_BLOCK = 2000


def path_blocks(n_paths: int, block: int = DEFAULT_BLOCK):
    """Split ``range(n_paths)`` into contiguous ``(start, stop)`` blocks.

    Blocks depend only on ``n_paths`` and ``block``, never on the worker count,
    so every per-path quantity is the same however the blocks are scheduled.
    """
    if n_paths < 0:
        raise ValueError("n_paths must be nonnegative")
    block = max(1, int(block))
    return [(s, min(s + block, n_paths)) for s in range(0, n_paths, block)]


def resolve_workers(workers) -> int:
    if workers is None or workers == 0:
        return 1
    if workers < 0:
        return os.cpu_count() or 1
    return int(workers)


def map_blocks(fn, job, n_paths: int, block: int = DEFAULT_BLOCK, workers=1) -> list:
    """``[fn(job, start, stop) for each block]`` in block order.

    ``fn`` must be a module-level function so it can be shipped to worker
    processes.
    """
    blocks = path_blocks(n_paths, block)
    workers = resolve_workers(workers)
    if workers == 1 or len(blocks) <= 1:
        return [fn(job, s, e) for s, e in blocks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, job, s, e) for s, e in blocks]
        return [f.result() for f in futs]
