# Planner backends
from .interface import PlannerBackend, PlannerReply
from .factory import create_planner, get_planner
from .mock import MockPlanner
from .faulty import FAULT_SCRIPTS, FaultyPlanner
from .utils import context_block, extract_context, observation_fields, parse_json_response

__all__ = [
    "PlannerBackend",
    "PlannerReply",
    "create_planner",
    "get_planner",
    "MockPlanner",
    "FaultyPlanner",
    "FAULT_SCRIPTS",
    "context_block",
    "extract_context",
    "observation_fields",
    "parse_json_response",
]
