"""Deterministic parallel map: results are assembled by index, so the
worker count affects scheduling only, never values or their order."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def _run_chunk(args):
    fn, indices, payloads = args
    return indices, [fn(i, p) for i, p in zip(indices, payloads)]


def parallel_map(fn, payloads, workers: int = 1, chunk: int = 64):
    """Apply ``fn(index, payload)`` over payloads; returns results in index order.

    ``fn`` must be a module-level (picklable) function when workers > 1.
    """
    payloads = list(payloads)
    results = [None] * len(payloads)
    if workers <= 1 or len(payloads) <= chunk:
        for i, p in enumerate(payloads):
            results[i] = fn(i, p)
        return results
    tasks = []
    for start in range(0, len(payloads), chunk):
        idx = list(range(start, min(start + chunk, len(payloads))))
        tasks.append((fn, idx, [payloads[i] for i in idx]))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for indices, values in pool.map(_run_chunk, tasks):
            for i, value in zip(indices, values):
                results[i] = value
    return results
