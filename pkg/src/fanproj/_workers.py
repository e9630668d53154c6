"""Worker-count resolution and an order-preserving parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "FANPROJ_THREADS"


def resolve_workers(workers: Optional[int] = None) -> int:
    """Explicit value wins, then ``FANPROJ_THREADS``, then 1."""
    if workers is None:
        raw = os.environ.get(ENV_VAR, "").strip()
        workers = int(raw) if raw else 1
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    # results come back in input order whatever the pool size, so any
    # reduction done by the caller is independent of scheduling
    items = list(items)
    n = resolve_workers(workers)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
