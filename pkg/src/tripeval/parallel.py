"""Order-preserving process pool helper."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

WORKERS_ENV = "TRIPEVAL_WORKERS"

_shared: Any = None


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, int(explicit))
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _init(shared: Any) -> None:
    global _shared
    _shared = shared


def _call(job):
    func, item = job
    return func(_shared, item)


def pmap(func: Callable[[Any, T], R], items: Iterable[T], shared: Any = None, workers: int | None = None) -> list[R]:
    """``[func(shared, x) for x in items]``, optionally spread over worker processes.

    Results always come back in input order.  ``func`` must be a module-level
    function; ``shared`` is sent to each worker once.
    """
    items = list(items)
    n = worker_count(workers)
    if n <= 1 or len(items) < 2:
        return [func(shared, x) for x in items]
    chunk = max(1, len(items) // (n * 4))
    with ProcessPoolExecutor(max_workers=n, initializer=_init, initargs=(shared,)) as ex:
        return list(ex.map(_call, [(func, x) for x in items], chunksize=chunk))
