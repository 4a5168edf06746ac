"""
Unit tests for replica statistics
"""

import math

import numpy as np
import pytest

from src.dephydro.errors import DomainError
from src.dephydro.stats import (
    ReplicaAggregator,
    batch_means,
    batch_variance,
    get_replica_aggregator,
    is_decreasing,
    ks_same_law,
    paired_decrease_fraction,
    poisson_rate_ci,
    variance_ci,
    within_sigma,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def aggregator():
    return ReplicaAggregator()


class TestReplicaAggregator:
    """Test summaries and outlier detection"""

    def test_summary(self, aggregator):
        summary = aggregator.summarize([1.0, 2.0, 3.0, 4.0])
        assert summary.n == 4
        assert summary.mean == 2.5
        assert summary.median == 2.5
        assert summary.std == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
        assert summary.stderr == pytest.approx(summary.std / 2)
        assert summary.to_dict()["max"] == 4.0

    def test_single_and_empty(self, aggregator):
        assert aggregator.summarize([5.0]).stderr == 0.0
        assert math.isnan(aggregator.summarize([]).mean)

    def test_outliers(self, aggregator):
        assert aggregator.detect_outliers([1.0, 1.1, 0.9, 1.0, 9.0]) == [4]
        assert aggregator.detect_outliers([1.0, 50.0]) == []

    def test_global_instance(self):
        assert get_replica_aggregator() is get_replica_aggregator()


class TestIntervals:
    """Test the interval estimators"""

    def test_within_sigma(self):
        assert within_sigma(1.0, 0.1, 1.25, 3.0)
        assert not within_sigma(1.0, 0.1, 1.5, 3.0)
        assert within_sigma(0.3, 0.0, 0.3, 3.0)

    def test_batch_means_of_constant_series(self):
        mean, stderr, lo, hi = batch_means([2.0] * 100, 10)
        assert mean == 2.0
        assert stderr == 0.0
        assert lo == hi == 2.0

    def test_batch_means_covers_true_mean(self):
        series = np.random.default_rng(0).normal(1.0, 1.0, 10000)
        mean, _, lo, hi = batch_means(series, 20, 0.99)
        assert lo < 1.0 < hi
        assert lo < mean < hi

    def test_batch_means_needs_batches(self):
        with pytest.raises(ValueError):
            batch_means([1.0, 2.0], 1)
        with pytest.raises(ValueError):
            batch_means([1.0, 2.0], 5)

    def test_batch_variance(self):
        series = np.random.default_rng(1).normal(0.0, 2.0, 20000)
        var, _, lo, hi = batch_variance(series, 20, 0.99)
        assert lo < 4.0 < hi
        assert var == pytest.approx(4.0, rel=0.1)
        with pytest.raises(ValueError):
            batch_variance([1.0] * 10, 10)

    def test_variance_ci(self):
        values = np.random.default_rng(2).normal(0.0, 1.0, 2000)
        var, lo, hi = variance_ci(values, 0.99)
        assert lo < var < hi
        assert lo < 1.0 < hi
        with pytest.raises(ValueError):
            variance_ci([1.0])

    def test_poisson_zero_count(self):
        rate, lo, hi = poisson_rate_ci(0, 1.0, 0.99)
        assert rate == 0.0 and lo == 0.0
        assert hi == pytest.approx(-math.log(0.005))

    def test_poisson_scales_with_exposure(self):
        rate, lo, hi = poisson_rate_ci(100, 50.0, 0.99)
        assert rate == 2.0
        assert lo < 2.0 < hi
        with pytest.raises(DomainError):
            poisson_rate_ci(1, 0.0)


class TestPredicates:
    """Test monotonicity and law comparisons"""

    def test_is_decreasing(self):
        assert is_decreasing([3.0, 2.0, 1.0])
        assert not is_decreasing([3.0, 3.0, 1.0])
        assert is_decreasing([3.0, 3.0, 1.0], strict=False)

    def test_paired_decrease_fraction(self):
        errors = np.array([[0.3, 0.2, 0.1], [0.3, 0.4, 0.1]])
        assert paired_decrease_fraction(errors) == 0.75
        assert math.isnan(paired_decrease_fraction(np.array([[0.1], [0.2]])))

    def test_ks_same_law(self):
        rng = np.random.default_rng(3)
        _, p, same = ks_same_law(rng.normal(size=500), rng.normal(size=500), 0.999)
        assert same and p > 0.001
        _, _, same = ks_same_law(rng.normal(size=500), rng.normal(3.0, size=500))
        assert not same
