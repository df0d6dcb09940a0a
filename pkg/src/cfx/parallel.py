"""Fan a per-index job out over worker processes without changing its results.

Jobs are registered in a module global before the pool forks, so models with
closures never need to be pickled; only index chunks and plain results cross
process boundaries. Results always come back in index order.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Sequence

_JOBS: Dict[int, tuple] = {}


def _run_chunk(args):
    token, chunk = args
    fn, payload = _JOBS[token]
    return [fn(payload, i) for i in chunk]


def map_indices(fn: Callable[[Any, int], Any], payload: Any, indices: Sequence[int], workers: int = 1) -> List[Any]:
    """``[fn(payload, i) for i in indices]``, optionally spread over ``workers`` forked processes."""
    indices = list(indices)
    if workers is None or workers <= 1 or len(indices) < 2 or "fork" not in mp.get_all_start_methods():
        return [fn(payload, i) for i in indices]
    token = id(payload) ^ id(fn)
    _JOBS[token] = (fn, payload)
    try:
        n_chunks = min(len(indices), workers * 4)
        size = -(-len(indices) // n_chunks)
        chunks = [indices[j : j + size] for j in range(0, len(indices), size)]
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as ex:
            parts = list(ex.map(_run_chunk, [(token, c) for c in chunks]))
    finally:
        _JOBS.pop(token, None)
    return [x for part in parts for x in part]
