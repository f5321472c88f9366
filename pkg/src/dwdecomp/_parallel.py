"""Ordered parallel map capped by the DWD_THREADS environment variable.

Work items must be independent; results are returned in input order, so the
degree of parallelism never changes what callers see.
"""
import os
from concurrent.futures import ThreadPoolExecutor


def max_workers():
    raw = os.environ.get("DWD_THREADS", "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


def pmap(fn, items):
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
