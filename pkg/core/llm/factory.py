"""
Planner factory - selects the backend named by the run configuration
"""
import threading
from typing import Optional

from config_loader import PLANNER_BACKEND
from core.llm.interface import PlannerBackend

_planner: Optional[PlannerBackend] = None
_planner_lock = threading.Lock()


def create_planner(backend: Optional[str] = None) -> PlannerBackend:
    """
    Build a planner backend.

    Args:
        backend: "mock", "remote" or "faulty:<script>"; the config value when omitted
    """
    backend = (backend or PLANNER_BACKEND()).strip()
    if backend == "mock":
        from core.llm.mock import MockPlanner
        return MockPlanner()
    if backend == "remote":
        from core.llm.client import RemotePlanner
        return RemotePlanner()
    if backend.startswith("faulty:"):
        from core.llm.faulty import FaultyPlanner
        return FaultyPlanner(backend.split(":", 1)[1])
    raise ValueError(f"unknown planner backend {backend!r}; use mock, remote or faulty:<script>")


def get_planner() -> PlannerBackend:
    """Get the configured planner (singleton)"""
    global _planner
    with _planner_lock:
        if _planner is None:
            _planner = create_planner()
        return _planner
