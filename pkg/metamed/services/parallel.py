"""Counter-based RNG substreams and an order-preserving worker map.

Every replicate draws from its own generator derived from (seed, *key), so results do
not depend on how replicates are scheduled across workers.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

import numpy as np

from metamed.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def derive_seed(seed: int, *key: int) -> int:
    """64-bit seed for a child computation that takes its own seed."""
    state = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)).generate_state(1, dtype=np.uint64)
    return int(state[0])


def map_indexed(fn: Callable[[int], T], count: int, workers: int = 0, prefix: str = "metamed") -> List[T]:
    """[fn(0), ..., fn(count - 1)] computed on up to `workers` threads."""
    workers = workers or settings.workers
    if workers <= 1 or count < 2:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(workers, count), thread_name_prefix=prefix) as pool:
        return list(pool.map(fn, range(count)))
