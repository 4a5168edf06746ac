"""
Replica statistics for dephydro
Means with standard errors, confidence intervals and monotonicity predicates
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import stats as sps

from .errors import DomainError


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    std: float
    stderr: float
    median: float
    min: float
    max: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


class ReplicaAggregator:
    """Aggregate one metric over independent replicas"""

    def __init__(self):
        self.logger = logger.bind(component="ReplicaAggregator")

    def summarize(self, values: Sequence[float]) -> Summary:
        arr = np.asarray(values, dtype=np.float64)
        if not arr.size:
            nan = float("nan")
            return Summary(0, nan, nan, nan, nan, nan, nan)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return Summary(
            n=int(arr.size),
            mean=float(arr.mean()),
            std=std,
            stderr=std / math.sqrt(arr.size),
            median=float(np.median(arr)),
            min=float(arr.min()),
            max=float(arr.max()),
        )

    def detect_outliers(self, values: Sequence[float]) -> List[int]:
        """Indices outside 1.5 IQR of the quartiles"""
        arr = np.asarray(values, dtype=np.float64)
        if arr.size < 4:
            return []
        q1, q3 = np.percentile(arr, [25, 75])
        iqr = q3 - q1
        mask = (arr < q1 - 1.5 * iqr) | (arr > q3 + 1.5 * iqr)
        outliers = np.flatnonzero(mask).tolist()
        if outliers:
            self.logger.debug(f"{len(outliers)} outlying replicas of {arr.size}")
        return outliers


def within_sigma(mean: float, stderr: float, target: float, z: float) -> bool:
    """|mean - target| <= z * stderr, with a roundoff floor for degenerate samples"""
    return abs(mean - target) <= z * stderr + 1e-12


def batch_means(series: Sequence[float], n_batches: int, confidence: float = 0.95) -> Tuple[float, float, float, float]:
    """Mean of a correlated series with a batch-means t interval: (mean, stderr, lo, hi)"""
    arr = np.asarray(series, dtype=np.float64)
    if n_batches < 2:
        raise DomainError("batch means needs at least two batches")
    size = arr.size // n_batches
    if size < 1:
        raise DomainError(f"{arr.size} samples cannot fill {n_batches} batches")
    means = arr[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    mean = float(means.mean())
    stderr = float(means.std(ddof=1) / math.sqrt(n_batches))
    half = float(sps.t.ppf(0.5 + confidence / 2, n_batches - 1)) * stderr
    return mean, stderr, mean - half, mean + half


def batch_variance(series: Sequence[float], n_batches: int, confidence: float = 0.95) -> Tuple[float, float, float, float]:
    """Variance of a correlated series from per-batch variances: (var, stderr, lo, hi)"""
    arr = np.asarray(series, dtype=np.float64)
    size = arr.size // max(n_batches, 1)
    if n_batches < 2 or size < 2:
        raise DomainError(f"{arr.size} samples cannot fill {n_batches} batches of two or more")
    per_batch = arr[: size * n_batches].reshape(n_batches, size).var(axis=1, ddof=1)
    return batch_means(per_batch, n_batches, confidence)


def variance_ci(values: Sequence[float], confidence: float = 0.95) -> Tuple[float, float, float]:
    """Sample variance with its chi-square interval: (var, lo, hi)"""
    arr = np.asarray(values, dtype=np.float64)
    k = arr.size - 1
    if k < 1:
        raise DomainError("variance needs at least two samples")
    var = float(arr.var(ddof=1))
    alpha = 1.0 - confidence
    lo = k * var / float(sps.chi2.ppf(1 - alpha / 2, k))
    hi = k * var / float(sps.chi2.ppf(alpha / 2, k))
    return var, lo, hi


def poisson_rate_ci(count: int, exposure: float, confidence: float = 0.99) -> Tuple[float, float, float]:
    """Exact (Garwood) interval for a Poisson rate: (rate, lo, hi)"""
    if exposure <= 0:
        raise DomainError(f"exposure must be positive, got {exposure}")
    alpha = 1.0 - confidence
    lo = 0.0 if count == 0 else float(sps.chi2.ppf(alpha / 2, 2 * count)) / 2
    hi = float(sps.chi2.ppf(1 - alpha / 2, 2 * count + 2)) / 2
    return count / exposure, lo / exposure, hi / exposure


def is_decreasing(values: Sequence[float], strict: bool = True) -> bool:
    arr = np.asarray(values, dtype=np.float64)
    steps = np.diff(arr)
    return bool(np.all(steps < 0) if strict else np.all(steps <= 0))


def paired_decrease_fraction(errors: np.ndarray) -> float:
    """Share of (replica, consecutive scale) pairs whose error went down

    errors has shape (replicas, scales) with scales in increasing order.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2 or errors.shape[1] < 2:
        return float("nan")
    return float(np.mean(np.diff(errors, axis=1) < 0))


def ks_same_law(a: Sequence[float], b: Sequence[float], confidence: float = 0.99) -> Tuple[float, float, bool]:
    """Two-sample KS test: (statistic, p-value, not rejected at 1 - confidence)"""
    result = sps.ks_2samp(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return float(result.statistic), float(result.pvalue), bool(result.pvalue >= 1.0 - confidence)


# Global instance
replica_aggregator = ReplicaAggregator()


def get_replica_aggregator() -> ReplicaAggregator:
    return replica_aggregator
