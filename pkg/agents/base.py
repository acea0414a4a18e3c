import json
import logging
import re
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from agents.config import RunConfig
from agents.guard import sanitize, unsupported_inputs
from core.clock import get_clock
from core.errors import AuditError, MalformedPlanError, PreconditionError
from core.llm.interface import PlannerBackend
from core.llm.utils import parse_json_response
from knowledge.prompts import (
    PURPOSE_PLAN, RESPONSE_KEYS, build_choice_prompt, build_step_prompt, build_system_prompt, fence,
)
from reporting.trace import TraceStream, digest

logger = logging.getLogger(__name__)

MEMORY_WINDOW = 3
CLASS_COUNT = re.compile(r"(\d+)\s+classes")

# error_kind values written to step records
ERROR_UNKNOWN_ACTION = "hallucination_type1"
ERROR_UNSUPPORTED_INPUT = "hallucination_type2"
ERROR_FABRICATED_METRIC = "hallucination_type3"
ERROR_INSTRUCTION = "instruction_violation"
ERROR_BAD_PLAN = "bad_plan"
ERROR_ACTION = "action_error"


# Inputs

class TargetServiceInfo(BaseModel):
    """What the user tells the system about the service under assessment"""
    name: str = Field("target", description="Short service name")
    task_description: str = Field(..., description="What the service does")
    predict_endpoint: str = Field(..., description="URL returning posteriors")
    embedding_endpoint: Optional[str] = Field(None, description="URL returning embeddings")
    input_format: str = ""
    output_format: str = ""
    num_classes: Optional[int] = Field(None, description="Parsed from the output format when omitted")
    sensitive_attribute: Optional[str] = None
    query_budget: Optional[int] = Field(None, ge=1)

    @field_validator("predict_endpoint")
    @classmethod
    def _require_endpoint(cls, value: str) -> str:
        if not value or not value.strip():
            raise ValueError("a prediction endpoint is required")
        return value.strip()

    @model_validator(mode="after")
    def _class_count(self):
        if self.num_classes is None:
            match = CLASS_COUNT.search(self.output_format) or CLASS_COUNT.search(self.task_description)
            if match:
                self.num_classes = int(match.group(1))
        if self.num_classes is not None and self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        return self

    def sanitized(self) -> "TargetServiceInfo":
        return self.model_copy(update={
            "task_description": sanitize(self.task_description),
            "input_format": sanitize(self.input_format),
            "output_format": sanitize(self.output_format),
            "sensitive_attribute": sanitize(self.sensitive_attribute or "") or None,
        })

    def describe(self) -> str:
        lines = [
            f"service name: {self.name}",
            f"task description: {fence(self.task_description)}",
            f"input format: {fence(self.input_format)}",
            f"output format: {fence(self.output_format)}",
            f"num_classes: {self.num_classes}",
            f"predict_endpoint: {self.predict_endpoint}",
            f"embedding_endpoint: {self.embedding_endpoint or 'none'}",
        ]
        if self.sensitive_attribute:
            lines.append(f"sensitive attribute: {fence(self.sensitive_attribute)}")
        if self.query_budget is not None:
            lines.append(f"query budget: {self.query_budget}")
        return "\n".join(lines)

    def prompt_view(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"predict_endpoint", "embedding_endpoint"})


# Plans

class ImportantFact(BaseModel):
    key: str
    value: str
    step: int


class ActionPlan(BaseModel):
    reflection: str = ""
    plan: str = ""
    important_information: List[ImportantFact] = Field(default_factory=list)
    action: str
    action_input: Dict[str, Any] = Field(default_factory=dict)

    def facts(self) -> Dict[str, str]:
        return {f.key: f.value for f in self.important_information}


def parse_plan(raw_text: str, step: int = 0) -> ActionPlan:
    """
    Parse one planner reply.

    Raises:
        MalformedPlanError: the reply is not a JSON object with every response entry
    """
    try:
        payload = parse_json_response(raw_text)
    except (json.JSONDecodeError, TypeError) as e:
        raise MalformedPlanError(f"reply is not JSON: {e}", raw_text) from e
    if not isinstance(payload, dict):
        raise MalformedPlanError("reply is not a JSON object", raw_text)
    missing = [k for k in RESPONSE_KEYS if k not in payload]
    if missing:
        raise MalformedPlanError(f"reply lacks the entries: {', '.join(missing)}", raw_text)
    if not isinstance(payload["Action Input"], dict):
        raise MalformedPlanError("Action Input must be a JSON object", raw_text)

    info = payload["Important Information"] or {}
    if isinstance(info, list):
        info = {str(item.get("key")): item.get("value") for item in info if isinstance(item, dict)}
    if not isinstance(info, dict):
        raise MalformedPlanError("Important Information must be a JSON object", raw_text)
    try:
        return ActionPlan(
            reflection=str(payload["Reflection"] or ""),
            plan=str(payload["Plan"] or ""),
            important_information=[ImportantFact(key=str(k), value=str(v), step=step) for k, v in info.items()],
            action=str(payload["Action"] or "").strip(),
            action_input=payload["Action Input"],
        )
    except ValidationError as e:
        raise MalformedPlanError(f"reply does not form a plan: {e}", raw_text) from e


# Memory

class Memory:
    """Initial instruction, the last three (plan, observation) pairs and the facts carried forward"""

    def __init__(self, instruction: str):
        self._instruction = instruction
        self.window: Deque[Dict[str, Any]] = deque(maxlen=MEMORY_WINDOW)
        self._facts: Dict[str, ImportantFact] = {}

    @property
    def instruction(self) -> str:
        return self._instruction

    def remember(self, facts: List[ImportantFact]):
        for fact in facts:
            self._facts[fact.key] = fact

    def record(self, step: int, action: str, action_input: Dict[str, Any], observation: str):
        self.window.append({"step": step, "action": action, "action_input": action_input, "observation": observation})

    def important_information(self) -> Dict[str, str]:
        return {k: f.value for k, f in self._facts.items()}

    def recent(self) -> List[Dict[str, Any]]:
        return list(self.window)


# Status

class AgentState(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


_ORDER = {AgentState.PENDING: 0, AgentState.RUNNING: 1, AgentState.COMPLETED: 2, AgentState.FAILED: 2}


class AgentStatus:
    """Thread-safe status shared between an agent and the controller"""

    def __init__(self, agent_id: str, attack: Optional[str] = None):
        self.agent_id = agent_id
        self.attack = attack
        self._state = AgentState.PENDING
        self._steps = 0
        self._reason: Optional[str] = None
        self._lock = threading.Lock()

    @property
    def state(self) -> AgentState:
        with self._lock:
            return self._state

    @property
    def terminal(self) -> bool:
        return self.state in (AgentState.COMPLETED, AgentState.FAILED)

    def advance(self, state: AgentState, reason: Optional[str] = None):
        with self._lock:
            if _ORDER[state] <= _ORDER[self._state] and state != self._state:
                raise PreconditionError(f"{self.agent_id}: cannot move from {self._state.value} to {state.value}")
            if _ORDER[self._state] == 2 and state != self._state:
                raise PreconditionError(f"{self.agent_id} already finished as {self._state.value}")
            self._state = state
            if reason:
                self._reason = reason

    def count_step(self):
        with self._lock:
            self._steps += 1

    def snapshot(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "agent": self.agent_id,
                "attack": self.attack,
                "state": self._state.value,
                "steps": self._steps,
                "reason": self._reason,
            }


# Paths shown to the planner

class PathView:
    """Maps the agent's directories to short display prefixes and back"""

    def __init__(self, env_dir, workspace):
        self.roots = {"env": Path(env_dir).resolve(), "workspace": Path(workspace).resolve()}

    def display(self, path) -> str:
        path = Path(path).resolve()
        for prefix, root in self.roots.items():
            if path == root:
                return prefix
            if root in path.parents:
                return f"{prefix}/{path.relative_to(root).as_posix()}"
        return str(path)

    def resolve(self, shown: str) -> Path:
        """Inverse of display; raises for anything outside the agent's directories"""
        shown = str(shown).strip().strip("/") or "."
        head, _, rest = shown.partition("/")
        if head not in self.roots:
            raise PreconditionError(f"no such directory: {shown}; start from env or workspace")
        root = self.roots[head]
        path = (root / rest).resolve() if rest else root
        if path != root and root not in path.parents:
            raise PreconditionError(f"no such directory: {shown}")
        return path

    def scrub(self, text: str) -> str:
        for prefix, root in self.roots.items():
            text = text.replace(str(root), prefix)
        return text


@dataclass
class StepOutcome:
    observation: str
    error_kind: Optional[str] = None
    terminal: bool = False
    failed: bool = False


# Agent loop

class BaseAgent(ABC):
    """
    Plan-act-observe loop shared by the controller and the attack agents.

    Usage:
        class ControllerAgent(BaseAgent):
            def dispatch(self, plan): ...

        status = ControllerAgent(...).run()
    """

    role: str = ""
    actions: Dict[str, str] = {}

    def __init__(
        self,
        agent_id: str,
        planner: PlannerBackend,
        instruction: str,
        action_space: List[str],
        run_dir,
        workspace,
        env_dir,
        run_config: RunConfig,
        attack: Optional[str] = None,
    ):
        self.agent_id = agent_id
        self.planner = planner
        self.action_space = list(action_space)
        self.run_config = run_config
        self.attack = attack
        self.run_dir = Path(run_dir)
        self.workspace = Path(workspace)
        self.workspace.mkdir(parents=True, exist_ok=True)
        self.paths = PathView(env_dir, self.workspace)
        self.memory = Memory(instruction)
        self.status = AgentStatus(agent_id, attack)
        self.trace = TraceStream(run_dir, agent_id, get_clock(run_config.clock), attack)
        self.step_count = 0
        self._sources: List[str] = [instruction]
        self._system_prompt = build_system_prompt(self.role, self.actions, self.action_space)
        self._started: Optional[float] = None
        self._sub_tokens = [0, 0]

    @property
    def sources(self) -> List[str]:
        """Instruction plus every observation so far"""
        return list(self._sources)

    @abstractmethod
    def context(self) -> Dict[str, Any]:
        """Agent-specific fields of the context block"""

    @abstractmethod
    def dispatch(self, plan: ActionPlan) -> StepOutcome:
        """Execute one validated action"""

    def between_steps(self):
        """Hook run after every step that did not end the loop"""

    def on_finish(self, state: AgentState, reason: Optional[str]):
        """Hook run once the loop ends"""

    # --- planning ---

    def build_context(self) -> Dict[str, Any]:
        return {
            "purpose": PURPOSE_PLAN,
            "step": self.step_count,
            "action_space": self.action_space,
            "important_information": self.memory.important_information(),
            "recent": self.memory.recent(),
            "env_dir": "env",
            **self.context(),
        }

    def request_plan(self) -> Tuple[ActionPlan, int, int, List[int]]:
        context = self.build_context()
        user_prompt = build_step_prompt(
            self.memory.instruction, context["recent"], context["important_information"], context
        )
        messages = [{"role": "system", "content": self._system_prompt}, {"role": "user", "content": user_prompt}]
        tokens_in = tokens_out = 0
        last_error: Optional[MalformedPlanError] = None
        for _ in range(self.run_config.plan_retries + 1):
            reply = self.planner.complete(messages, temperature=self.run_config.temperature)
            tokens_in += reply.input_tokens
            tokens_out += reply.output_tokens
            try:
                plan = parse_plan(reply.text, self.step_count)
                return plan, tokens_in, tokens_out, [e["step"] for e in context["recent"]]
            except MalformedPlanError as e:
                last_error = e
                messages = messages[:2] + [
                    {"role": "assistant", "content": reply.text},
                    {"role": "user", "content": f"Your reply could not be used ({e}). Reply again with exactly "
                                                f"one JSON object holding the entries {RESPONSE_KEYS}."},
                ]
        last_error.tokens = (tokens_in, tokens_out)
        raise last_error

    def consult(self, guideline: str, context: Dict[str, Any]) -> Dict[str, Any]:
        """One decision made inside an action, answered by the planner as a JSON object"""
        reply = self.planner.complete(build_choice_prompt(guideline, context), temperature=self.run_config.temperature)
        self._sub_tokens[0] += reply.input_tokens
        self._sub_tokens[1] += reply.output_tokens
        try:
            payload = parse_json_response(reply.text)
        except (ValueError, TypeError) as e:
            raise PreconditionError(f"the {context.get('purpose')} reply does not parse: {e}") from e
        if not isinstance(payload, dict):
            raise PreconditionError(f"the {context.get('purpose')} reply is not a JSON object")
        return payload

    # --- observations ---

    def archive(self, text: str) -> Path:
        path = self.workspace / "observations" / f"step-{self.step_count:03d}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return path

    def bound(self, text: str, archived: Path) -> str:
        limit = self.run_config.observation_limit
        if len(text) <= limit:
            return text
        note = f"\n... [truncated; full text in {self.paths.display(archived)}]"
        return text[: limit - len(note)] + note

    # --- loop ---

    def validate(self, plan: ActionPlan) -> Optional[StepOutcome]:
        if plan.action not in self.action_space:
            return StepOutcome(
                f"error: unknown action: {plan.action}\navailable actions: {', '.join(self.action_space)}",
                ERROR_UNKNOWN_ACTION,
            )
        unsupported = unsupported_inputs(plan.action_input, self._sources)
        if unsupported:
            shown = ", ".join(f"{k}={v!r}" for k, v in unsupported)
            return StepOutcome(
                f"error: action input values not found in the instruction or any observation: {shown}\n"
                "use values exactly as they appear in an observation",
                ERROR_UNSUPPORTED_INPUT,
            )
        return None

    def step(self) -> StepOutcome:
        self.step_count += 1
        self.status.count_step()
        self._sub_tokens = [0, 0]
        tokens_in = tokens_out = 0
        context_steps: List[int] = [e["step"] for e in self.memory.recent()]
        try:
            plan, tokens_in, tokens_out, context_steps = self.request_plan()
        except MalformedPlanError as e:
            tokens_in, tokens_out = getattr(e, "tokens", (0, 0))
            plan = ActionPlan(action="", reflection="", plan="")
            outcome = StepOutcome(f"error: {e}\nreply with one JSON object holding {RESPONSE_KEYS}", ERROR_INSTRUCTION)
        else:
            outcome = self.validate(plan)
            if outcome is None:
                try:
                    outcome = self.dispatch(plan)
                except AuditError as e:
                    outcome = StepOutcome(f"error: {e}", ERROR_ACTION)
                except Exception as e:
                    logger.error("%s step %d: %s failed", self.agent_id, self.step_count, plan.action, exc_info=True)
                    outcome = StepOutcome(f"error: {type(e).__name__}: {e}", ERROR_ACTION)
            self.memory.remember(plan.important_information)

        full = self.paths.scrub(outcome.observation)
        archived = self.archive(full)
        observation = self.bound(full, archived)
        self.memory.record(self.step_count, plan.action, plan.action_input, observation)
        self._sources.append(observation)
        self.trace.step(
            step=self.step_count,
            reflection=plan.reflection,
            plan=plan.plan,
            important_information=self.memory.important_information(),
            action=plan.action,
            action_input=plan.action_input,
            observation=observation,
            observation_digest=digest(full),
            observation_path=self.paths.display(archived),
            observation_file=archived.relative_to(self.run_dir).as_posix(),
            error_kind=outcome.error_kind,
            input_tokens=tokens_in + self._sub_tokens[0],
            output_tokens=tokens_out + self._sub_tokens[1],
            context_steps=context_steps,
        )
        if outcome.error_kind:
            logger.info("%s step %d: %s -> %s", self.agent_id, self.step_count, plan.action or "(none)", outcome.error_kind)
        return StepOutcome(observation, outcome.error_kind, outcome.terminal, outcome.failed)

    def run(self) -> AgentStatus:
        self._started = time.monotonic()
        self.status.advance(AgentState.RUNNING)
        self.trace.agent_start(self.memory.instruction, self.action_space)
        state, reason = AgentState.FAILED, None
        try:
            while True:
                if self.step_count >= self.run_config.max_steps:
                    reason = f"step limit of {self.run_config.max_steps} reached"
                    break
                if time.monotonic() - self._started > self.run_config.runtime_limit_s:
                    reason = f"runtime limit of {self.run_config.runtime_limit_s}s reached"
                    break
                outcome = self.step()
                if outcome.terminal:
                    state = AgentState.FAILED if outcome.failed else AgentState.COMPLETED
                    reason = outcome.observation if outcome.failed else None
                    break
                self.between_steps()
        except Exception as e:
            logger.error("%s stopped: %s", self.agent_id, e, exc_info=True)
            reason = f"{type(e).__name__}: {e}"
        self.on_finish(state, reason)
        self.status.advance(state, reason)
        self.trace.agent_end(state.value, self.step_count, reason)
        logger.info("%s finished as %s after %d steps", self.agent_id, state.value, self.step_count)
        return self.status
