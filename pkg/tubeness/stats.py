"""
stats.py - Spearman rank correlation for checking counts and volumes against ratings.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

# Import external packages
import numpy as np
from scipy import stats as sps

# Import functions from local modules
from tubeness.errors import StatsError
from utils.utils_logger import logger

# exhaustive permutation is 10! = 3.6M orderings at most
MAX_PERMUTATION_N = 10


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int


def _ranked_pair(x: Sequence[float], y: Sequence[float]):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        logger.error(f"Spearman inputs differ in length: {x.size} vs {y.size}")
        raise StatsError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise StatsError(f"need at least 3 pairs, got {x.size}")
    rx = sps.rankdata(x, method="average")
    ry = sps.rankdata(y, method="average")
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise StatsError("zero rank variance")
    return rx, ry


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    r = float(np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db)))
    return min(1.0, max(-1.0, r))


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """
    Spearman's rho with fractional ranks for ties.

    The two-sided p-value uses t = rho * sqrt((n - 2) / (1 - rho**2)) with
    n - 2 degrees of freedom; a perfect correlation reports the smallest
    positive double rather than 0.
    """
    rx, ry = _ranked_pair(x, y)
    n = rx.size
    rho = _pearson(rx, ry)
    if abs(rho) >= 1.0:
        p_value = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p_value = float(2.0 * sps.t.sf(abs(t), n - 2))
    p_value = min(1.0, max(p_value, np.finfo(np.float64).tiny))
    return CorrelationResult(rho=rho, p_value=p_value, n=n)


def spearman_permutation_pvalue(x: Sequence[float], y: Sequence[float]) -> float:
    """Exact two-sided p-value: share of orderings of y whose |rho| reaches the observed |rho|."""
    rx, ry = _ranked_pair(x, y)
    n = rx.size
    if n > MAX_PERMUTATION_N:
        raise StatsError(f"exact permutation test supports n <= {MAX_PERMUTATION_N}, got {n}")
    observed = abs(_pearson(rx, ry))
    hits = 0
    total = 0
    for order in itertools.permutations(range(n)):
        if abs(_pearson(rx, ry[list(order)])) >= observed - 1e-12:
            hits += 1
        total += 1
    return hits / total
