"""Concurrent job execution over a synchronized wall-clock budget ledger."""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from neunets.trainer.core import train


class BudgetLedger:
    """Thread-safe, monotone accumulator of consumed training seconds.

    The one object jobs share: every epoch charges its wall-clock cost
    here, and jobs stop cleanly once the cap is reached.
    """

    def __init__(self, cap_seconds: float = math.inf):
        if not cap_seconds > 0:
            raise ValueError("budget cap must be positive")
        self._cap = float(cap_seconds)
        self._total = 0.0
        self._lock = threading.Lock()

    @property
    def cap(self) -> float:
        return self._cap

    @property
    def total(self) -> float:
        with self._lock:
            return self._total

    def charge(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot charge negative time")
        with self._lock:
            self._total += float(seconds)

    def remaining(self) -> float:
        return max(self._cap - self.total, 0.0)

    def exhausted(self) -> bool:
        return self.total >= self._cap


@dataclass
class JobFailure:
    """A job that raised; carried in the results list, never re-raised."""

    job_id: str
    error: str
    exception: Exception


def run_parallel(jobs, max_workers: int = 2):
    """Train jobs on a worker pool; results come back in job order.

    Each job must own its graph — nothing here copies or locks them.  A
    crashing job becomes a JobFailure entry; the other jobs are unaffected.
    """
    if max_workers < 1:
        raise ValueError("max_workers must be >= 1")
    jobs = list(jobs)

    def _run(job):
        try:
            return train(job)
        except Exception as exc:
            return JobFailure(job_id=job.job_id, error=repr(exc), exception=exc)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run, jobs))
