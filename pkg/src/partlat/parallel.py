"""Bounded fan-out helper.

PARTLAT_THREADS caps the worker count for the few corpus-level loops
that fan out; results always come back in input order, so parallel and
serial execution are interchangeable.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_cap() -> int:
    raw = os.environ.get("PARTLAT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def pmap(fn, items):
    """Map preserving input order, threaded when PARTLAT_THREADS > 1."""
    items = list(items)
    cap = thread_cap()
    if cap <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(cap, len(items))) as pool:
        return list(pool.map(fn, items))
