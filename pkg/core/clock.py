"""
Clocks used to stamp trace records.

A logical clock makes mock-planner runs reproducible byte-for-byte; the wall
clock is used for real assessments.
"""
import itertools
import threading
from datetime import datetime, timezone


class WallClock:
    def now(self) -> str:
        return datetime.now(timezone.utc).isoformat()


class LogicalClock:
    """Monotonic tick counter rendered as a fixed-width string"""

    def __init__(self):
        self._ticks = itertools.count(1)
        self._lock = threading.Lock()

    def now(self) -> str:
        with self._lock:
            return f"tick-{next(self._ticks):08d}"


def get_clock(kind: str):
    if kind == "logical":
        return LogicalClock()
    if kind == "wall":
        return WallClock()
    raise ValueError(f"Unknown clock kind: {kind}")
