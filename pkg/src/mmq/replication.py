"""Seeded replication fan-out.

Every replication owns a generator derived from the master seed by
counter-based spawning, so results are independent of worker count and
completion order; aggregation slots results by replication index.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor, as_completed

import numpy as np


def resolve_workers(requested: int | None) -> int:
    """Worker count from an explicit request or the MMQ_THREADS env var."""
    if requested is not None and requested >= 1:
        return int(requested)
    env = os.environ.get("MMQ_THREADS", "")
    if env.strip().isdigit() and int(env) >= 1:
        return int(env)
    return 1


def substreams(seed, count: int) -> list[np.random.SeedSequence]:
    seed_seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return seed_seq.spawn(count)


def run_replications(fn, reps: int, seed, workers: int = 1) -> list:
    """Run ``fn(index, rng)`` for each replication and return results in
    replication order."""
    streams = substreams(seed, reps)
    if workers <= 1:
        return [fn(i, np.random.default_rng(streams[i])) for i in range(reps)]
    results = [None] * reps
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(fn, i, np.random.default_rng(streams[i])): i
            for i in range(reps)
        }
        for fut in as_completed(futures):
            results[futures[fut]] = fut.result()
    return results
