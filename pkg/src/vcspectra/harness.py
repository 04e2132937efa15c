"""Replicated Monte Carlo execution with derived per-replicate seeds.

Replicate i of a run with master seed s uses stream seed ``s XOR i``, so
results are bit-identical for a given seed regardless of worker count or
scheduling order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

from .numerics import derive_seed

__all__ = ["run_replicates", "default_threads"]

_blas_limiter = None


def default_threads() -> int:
    return os.cpu_count() or 1


def _init_worker() -> None:
    # one BLAS thread per worker process; the pool owns the parallelism
    global _blas_limiter
    try:
        from threadpoolctl import threadpool_limits

        _blas_limiter = threadpool_limits(limits=1)
    except ImportError:
        pass


def run_replicates(worker, jobs: list, seed: int, threads: int | None = None) -> list:
    """Run ``worker((job, rep_seed))`` for each job with derived seeds.

    ``jobs`` index the replicates; results come back in job order. The
    worker must be a module-level callable (it crosses process boundaries).
    """
    tasks = [(job, derive_seed(seed, i)) for i, job in enumerate(jobs)]
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    chunk = max(1, len(tasks) // (8 * threads))
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
        return list(pool.map(worker, tasks, chunksize=chunk))
