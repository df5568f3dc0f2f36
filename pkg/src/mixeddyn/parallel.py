"""Process-pool map capped by the ``MIXEDDYN_THREADS`` environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_VAR = "MIXEDDYN_THREADS"


def worker_count() -> int:
    """Configured worker count; ``0`` or unset means one per CPU."""
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError(f"{ENV_VAR} must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def pmap(fn, items):
    """Order-preserving map; runs in-process when one worker is configured."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
