"""Order-preserving thread map for per-mesh work; numpy releases the GIL
in the kernels that matter. Worker count is capped by the THREADS env var."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    env = os.environ.get("THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def thread_map(fn, items):
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
