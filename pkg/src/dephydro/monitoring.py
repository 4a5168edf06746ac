"""
Run monitoring for dephydro
Host snapshot and per-stage wall-clock accounting for meta.json
"""

import platform
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
import psutil
from loguru import logger


class HealthChecker:
    """Describes the machine a run executes on"""

    def __init__(self):
        self.logger = logger.bind(component="HealthChecker")

    def get_system_health(self) -> Dict[str, Any]:
        try:
            memory = psutil.virtual_memory()
            return {
                "status": "ok",
                "hostname": platform.node(),
                "python": platform.python_version(),
                "platform": platform.platform(),
                "cpu": {
                    "logical": psutil.cpu_count(),
                    "physical": psutil.cpu_count(logical=False),
                    "percent": psutil.cpu_percent(interval=0.1),
                },
                "memory": {
                    "percent": memory.percent,
                    "available_mb": memory.available // (1024 * 1024),
                    "total_mb": memory.total // (1024 * 1024),
                },
            }
        except Exception as e:
            self.logger.error(f"Error reading host information: {e}")
            return {"status": "error", "error": str(e)}

    def rss_mb(self) -> float:
        return psutil.Process().memory_info().rss / (1024 * 1024)


class PerformanceMonitor:
    """Wall-clock durations of named pipeline stages"""

    def __init__(self):
        self.logger = logger.bind(component="PerformanceMonitor")
        self.durations: Dict[str, List[float]] = {}

    def record(self, stage: str, seconds: float) -> None:
        self.durations.setdefault(stage, []).append(seconds)

    @contextmanager
    def measure(self, stage: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.record(stage, elapsed)
            self.logger.debug(f"{stage}: {elapsed:.3f}s")

    def stage_stats(self, stage: str) -> Dict[str, Any]:
        times = self.durations.get(stage)
        if not times:
            return {"stage": stage, "calls": 0}
        arr = np.asarray(times)
        return {
            "stage": stage,
            "calls": int(arr.size),
            "total_s": float(arr.sum()),
            "avg_s": float(arr.mean()),
            "min_s": float(arr.min()),
            "max_s": float(arr.max()),
            "p95_s": float(np.percentile(arr, 95)),
        }

    def all_stats(self) -> List[Dict[str, Any]]:
        return [self.stage_stats(stage) for stage in self.durations]

    def reset(self) -> None:
        self.durations.clear()


# Global instances
health_checker: Optional[HealthChecker] = None
performance_monitor: Optional[PerformanceMonitor] = None


def initialize_monitoring() -> None:
    global health_checker, performance_monitor
    health_checker = HealthChecker()
    performance_monitor = PerformanceMonitor()
    logger.debug("Monitoring initialized")


def get_health_checker() -> HealthChecker:
    if health_checker is None:
        initialize_monitoring()
    return health_checker


def get_performance_monitor() -> PerformanceMonitor:
    if performance_monitor is None:
        initialize_monitoring()
    return performance_monitor
