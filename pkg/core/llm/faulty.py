"""
Scripted faulty planner: the mock planner with one injected failure mode.

Each script reproduces a failure class seen with real planners so the trace
analyzer and the runtime's containment can be exercised offline:

    unknown_action           an action outside the action space
    fabricated_path          an invented dataset path in Execute Script
    fabricated_metric        a metric value in the report that no observation shows
    schema_violation         Execute Script without a required parameter
    malformed_output         replies that are not a JSON plan
    context_loss             the same failing Execute Script, repeated
    premature_final_answer   controller Final Answer while agents still run
    zero_attack_end          controller Final Answer before launching anything
    repeat_loop              an attack agent that only lists files
    eval_as_shadow           the owner's evaluation bundle used as shadow data
"""
import copy
import json
import threading
from collections import defaultdict
from typing import Any, Dict, List, Tuple

from core.llm.interface import PlannerReply
from core.llm.mock import MockPlanner
from core.llm.utils import estimate_tokens, extract_context
from knowledge.prompts import (
    DETERMINE_ATTACKS, EXECUTE_SCRIPT, FINAL_ANSWER, LAUNCH_ATTACK_AGENT, LIST_FILES, PURPOSE_PLAN,
)

FABRICATED_PATH = "path/to/shadow_dataset"
FABRICATED_METRIC = "0.9731"
UNKNOWN_ACTION = "Change Directory"
CONTEXT_LOSS_REPEATS = 3

FAULT_SCRIPTS = [
    "unknown_action",
    "fabricated_path",
    "fabricated_metric",
    "schema_violation",
    "malformed_output",
    "context_loss",
    "premature_final_answer",
    "zero_attack_end",
    "repeat_loop",
    "eval_as_shadow",
]


class FaultyPlanner(MockPlanner):
    """Mock planner whose replies are rewritten according to one fault script"""

    tag = "faulty"

    def __init__(self, script: str):
        if script not in FAULT_SCRIPTS:
            raise ValueError(f"unknown fault script {script!r}; choose one of {FAULT_SCRIPTS}")
        self.script = script
        self._lock = threading.Lock()
        self._fired: Dict[Tuple[str, str], int] = defaultdict(int)

    def _agent_key(self, context: Dict[str, Any]) -> Tuple[str, str]:
        return context.get("agent", ""), context.get("attack") or ""

    def _fire(self, context: Dict[str, Any], times: int = 1) -> bool:
        """True for the first `times` opportunities of the calling agent"""
        key = self._agent_key(context)
        with self._lock:
            if self._fired[key] >= times:
                return False
            self._fired[key] += 1
            return True

    def _fired_count(self, context: Dict[str, Any]) -> int:
        with self._lock:
            return self._fired[self._agent_key(context)]

    def complete(self, messages: List[Dict[str, str]], temperature: float = 0.0) -> PlannerReply:
        context = extract_context(messages) or {}
        if context.get("purpose") != PURPOSE_PLAN:
            return super().complete(messages, temperature)
        prompt = "".join(m.get("content", "") for m in messages)
        if self.script == "malformed_output" and context.get("agent") == "attack" and self._fire(context, 3):
            text = "I will now list the files in the environment directory."
            return PlannerReply(text, estimate_tokens(prompt), estimate_tokens(text))
        plan = self.rewrite(context, self.plan(context))
        text = "```json\n" + json.dumps(plan) + "\n```"
        return PlannerReply(text, estimate_tokens(prompt), estimate_tokens(text))

    def rewrite(self, context: Dict[str, Any], plan: Dict[str, Any]) -> Dict[str, Any]:
        plan = copy.deepcopy(plan)
        action = plan["Action"]
        is_attack = context.get("agent") == "attack"
        script = self.script

        if script == "unknown_action" and is_attack and context.get("step") == 2 and self._fire(context):
            plan["Action"], plan["Action Input"] = UNKNOWN_ACTION, {"directory": "env/data"}
        elif script == "repeat_loop" and is_attack:
            plan["Action"], plan["Action Input"] = LIST_FILES, {"directory": context.get("env_dir", "env")}
        elif script in ("fabricated_path", "eval_as_shadow") and is_attack and action == EXECUTE_SCRIPT \
                and self._fire(context):
            params = plan["Action Input"].setdefault("parameters", {})
            key = next((k for k in params if k.endswith("dataset_path")), "shadow_dataset_path")
            if script == "fabricated_path":
                params[key] = FABRICATED_PATH
            else:
                params[key] = f"targets/{context.get('target', {}).get('name', 'target')}/evaluation.npz"
        elif script == "schema_violation" and is_attack and action == EXECUTE_SCRIPT and self._fire(context):
            plan["Action Input"].get("parameters", {}).pop("learning_rate", None)
        elif script == "context_loss" and is_attack and action == EXECUTE_SCRIPT:
            if self._fire(context, 1 + CONTEXT_LOSS_REPEATS):
                plan["Action Input"].get("parameters", {}).pop("learning_rate", None)
        elif script == "context_loss" and is_attack and 0 < self._fired_count(context) <= CONTEXT_LOSS_REPEATS:
            # the error is forgotten and the same broken call is sent again
            last = (context.get("recent") or [{}])[-1]
            if last.get("action") == EXECUTE_SCRIPT and self._fire(context, 1 + CONTEXT_LOSS_REPEATS):
                plan["Important Information"] = {}
                plan["Action"], plan["Action Input"] = EXECUTE_SCRIPT, last.get("action_input", {})
        elif script == "fabricated_metric" and is_attack and action == FINAL_ANSWER and self._fire(context):
            plan["Action Input"]["summary"] += f" Attack accuracy reached {FABRICATED_METRIC}."
        elif script == "premature_final_answer" and not is_attack and action not in (DETERMINE_ATTACKS,
                                                                                     LAUNCH_ATTACK_AGENT):
            if action != FINAL_ANSWER and self._fire(context):
                plan["Action"], plan["Action Input"] = FINAL_ANSWER, {"summary": "The assessment is done."}
        elif script == "zero_attack_end" and not is_attack and action == LAUNCH_ATTACK_AGENT and self._fire(context):
            plan["Action"], plan["Action Input"] = FINAL_ANSWER, {"summary": "No attack is needed."}
        return plan
