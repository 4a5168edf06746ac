"""
Unit tests for run monitoring
"""

import time

import pytest

from src.dephydro.monitoring import (
    HealthChecker,
    PerformanceMonitor,
    get_health_checker,
    get_performance_monitor,
    initialize_monitoring,
)

pytestmark = pytest.mark.unit


class TestHealthChecker:
    """Test the host snapshot"""

    def test_system_health(self):
        health = HealthChecker().get_system_health()
        assert health["status"] == "ok"
        assert health["cpu"]["logical"] >= 1
        assert health["memory"]["total_mb"] > 0

    def test_rss(self):
        checker = HealthChecker()
        assert checker.rss_mb() > 0


class TestPerformanceMonitor:
    """Test stage timing"""

    def test_measure_records_duration(self):
        monitor = PerformanceMonitor()
        with monitor.measure("simulate"):
            time.sleep(0.01)
        stats = monitor.stage_stats("simulate")
        assert stats["calls"] == 1
        assert stats["total_s"] >= 0.005

    def test_measure_records_on_error(self):
        monitor = PerformanceMonitor()
        with pytest.raises(RuntimeError):
            with monitor.measure("write"):
                raise RuntimeError("disk full")
        assert monitor.stage_stats("write")["calls"] == 1

    def test_unknown_stage_and_reset(self):
        monitor = PerformanceMonitor()
        assert monitor.stage_stats("missing") == {"stage": "missing", "calls": 0}
        monitor.record("a", 1.0)
        monitor.record("a", 3.0)
        assert monitor.stage_stats("a")["avg_s"] == 2.0
        assert [s["stage"] for s in monitor.all_stats()] == ["a"]
        monitor.reset()
        assert monitor.all_stats() == []

    def test_global_instances(self):
        initialize_monitoring()
        assert get_performance_monitor() is get_performance_monitor()
        assert get_health_checker() is get_health_checker()
