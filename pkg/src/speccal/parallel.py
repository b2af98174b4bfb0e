"""Seed/kind-level process parallelism for pipeline stages.

Jobs fork worker processes that inherit a context dict by copy-on-write;
results are independent of the schedule, so parallel and sequential runs
produce identical artifacts. Each worker pins its BLAS pools to one thread
(two workers with multi-threaded BLAS thrash a small machine).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_start_method

JOB_CTX: dict = {}


def limit_blas_in_worker():
    if JOB_CTX.get("_parallel"):
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=1)
        except ImportError:
            pass


def map_jobs(fn, jobs: list, ctx: dict, workers: int) -> list:
    """Run fn(job) for each job, in forked workers when available."""
    parallel = workers > 1 and len(jobs) > 1 and get_start_method() == "fork"
    JOB_CTX.update({**ctx, "_parallel": parallel})
    try:
        if not parallel:
            return [fn(j) for j in jobs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    finally:
        JOB_CTX.clear()
