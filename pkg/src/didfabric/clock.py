"""Injectable logical clock; every timestamp in the fabric comes from one."""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone

EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


def iso(ticks: int) -> str:
    """ISO-8601 UTC rendering of a logical tick (one tick = one second past EPOCH)."""
    return (EPOCH + timedelta(seconds=ticks)).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso(value: str) -> int:
    dt = datetime.strptime(value, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int((dt - EPOCH).total_seconds())


class LogicalClock:
    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        return self._now

    def tick(self, n: int = 1) -> int:
        with self._lock:
            self._now += n
            return self._now
