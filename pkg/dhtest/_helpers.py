"""
Helper functions for dhtest
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

# Probabilities below this are structural zeros.
PRECISION = 1e-15

LOG2E = math.log2(math.e)


def _xlogx(p: np.ndarray) -> np.ndarray:
    """
    Elementwise p * log2(p) with 0 log 0 = 0.
    """
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > PRECISION, p * np.log2(p), 0.0)


def _entropy_bits(p: np.ndarray, axis=None) -> np.ndarray:
    return -_xlogx(p).sum(axis=axis)


def _log2_plus(x: float) -> float:
    """
    log⁺ in bits: max(log2 x, 0); arguments <= 0 map to +inf.
    """
    if x <= 0:
        return math.inf
    return max(math.log2(x), 0.0)


def _simplex_project(x: np.ndarray) -> np.ndarray:
    """
    Project a vector onto the standard simplex (sorted-threshold routine).
    """
    x = np.asarray(x, dtype=float)
    sorted_x = np.sort(x)
    n = sorted_x.size

    t_hat = 0.0
    for i in range(n - 2, -2, -1):
        t_hat = (sorted_x[-(n - 1 - i) :].sum() - 1) / (n - 1 - i)
        if i < 0 or t_hat >= sorted_x[i]:
            break

    return np.fmax(x - t_hat, 0.0)


def _simplex_project_rows(a: np.ndarray) -> np.ndarray:
    return np.vstack([_simplex_project(row) for row in a])


def _spawn_seeds(seed: int, count: int) -> List[np.random.SeedSequence]:
    """
    Pre-generate independent child seeds so results do not depend on scheduling.
    """
    return np.random.SeedSequence(seed).spawn(count)


def _thread_map(
    fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = 1
) -> List[R]:
    """
    Ordered map, parallel over a thread pool when threads > 1.
    """
    items = list(items)
    if not threads or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
