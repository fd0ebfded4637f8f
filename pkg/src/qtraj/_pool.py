"""Replicate fan-out shared by the bootstrap and the benchmark.

Results are keyed by replicate index and every replicate derives its own
random stream from (master seed, index), so the output is identical whether
the work runs serially or across any number of worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence


def pooled_map(worker: Callable, initializer: Callable, ctx, n_tasks: int,
               workers: int) -> list:
    if workers <= 1:
        initializer(ctx)
        return [worker(i) for i in range(n_tasks)]
    chunk = max(1, n_tasks // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, initializer=initializer,
                             initargs=(ctx,)) as pool:
        return list(pool.map(worker, range(n_tasks), chunksize=chunk))
