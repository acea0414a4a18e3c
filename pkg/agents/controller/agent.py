"""
ControllerAgent: decides which attacks apply to the target, runs one
AttackAgent per attack concurrently, watches their status and closes the
assessment once every agent has finished.
"""
import logging
from concurrent.futures import Future, ThreadPoolExecutor, wait
from typing import Any, Callable, Dict, List, Optional, Tuple

from agents.base import (
    ERROR_BAD_PLAN, ActionPlan, AgentState, BaseAgent, StepOutcome, TargetServiceInfo,
)
from core.errors import PreconditionError
from env.registry import DATASET_REGISTRY_FILE, load_dataset_registry
from knowledge.prompts import (
    ATTRIBUTE_INFERENCE, CANDIDATE_ATTACKS, CONTROLLER_ACTIONS, CONTROLLER_ROLE, DETERMINE_ATTACKS, FINAL_ANSWER,
    LAUNCH_ATTACK_AGENT, MONITOR_ATTACKS,
)
from reporting.trace import CONTROLLER_ID

logger = logging.getLogger(__name__)

# (attack, query allowance) -> an agent exposing .status, .run() and .section
AgentFactory = Callable[[str, Optional[int]], Any]


def controller_instruction(target: TargetServiceInfo, candidates: List[str]) -> str:
    return "\n".join([
        "Assess the inference-attack risk of the target service described below.",
        f"candidate attacks: {', '.join(candidates)}",
        "",
        target.describe(),
    ])


def determine_attacks(
    candidates: List[str],
    target: TargetServiceInfo,
    env_dir,
) -> Tuple[List[str], Dict[str, str]]:
    """
    Confirm the candidate attacks the service supports.

    Returns:
        (confirmed attacks in candidate order, excluded attack -> reason)
    """
    if not candidates:
        raise PreconditionError("no candidate attacks were given")
    confirmed: List[str] = []
    excluded: Dict[str, str] = {}
    for attack in dict.fromkeys(candidates):
        if attack not in CANDIDATE_ATTACKS:
            excluded[attack] = "no starter task is registered for this attack"
        elif attack == ATTRIBUTE_INFERENCE:
            reason = _attribute_blocker(target, env_dir)
            if reason:
                excluded[attack] = reason
            else:
                confirmed.append(attack)
        elif not target.predict_endpoint:
            excluded[attack] = "the service exposes no prediction endpoint"
        else:
            confirmed.append(attack)
    return confirmed, excluded


def _attribute_blocker(target: TargetServiceInfo, env_dir) -> Optional[str]:
    if not target.embedding_endpoint:
        return "the service exposes no embedding endpoint"
    if not target.sensitive_attribute:
        return "no sensitive attribute was provided"
    records = load_dataset_registry(env_dir / DATASET_REGISTRY_FILE)
    if not any(r.attribute(target.sensitive_attribute) for r in records):
        return f"no registry dataset carries the attribute {target.sensitive_attribute}"
    return None


class ControllerAgent(BaseAgent):
    role = CONTROLLER_ROLE
    actions = CONTROLLER_ACTIONS

    def __init__(
        self,
        planner,
        target: TargetServiceInfo,
        agent_factory: AgentFactory,
        run_dir,
        env_dir,
        run_config,
        candidate_attacks: Optional[List[str]] = None,
    ):
        self.target = target
        self.candidate_attacks = list(candidate_attacks or CANDIDATE_ATTACKS)
        self.agent_factory = agent_factory
        super().__init__(
            agent_id=CONTROLLER_ID,
            planner=planner,
            instruction=controller_instruction(target, self.candidate_attacks),
            action_space=list(CONTROLLER_ACTIONS),
            run_dir=run_dir,
            workspace=run_dir / CONTROLLER_ID,
            env_dir=env_dir,
            run_config=run_config,
        )
        self.env_dir = env_dir
        self.confirmed: Optional[List[str]] = None
        self.excluded: Dict[str, str] = {}
        self.agents: Dict[str, Any] = {}
        self.futures: Dict[str, Future] = {}
        self._allocated = 0
        self.final_answer_given = False
        self._executor: Optional[ThreadPoolExecutor] = None
        self._handlers = {
            DETERMINE_ATTACKS: self.determine,
            LAUNCH_ATTACK_AGENT: self.launch,
            MONITOR_ATTACKS: self.monitor,
            FINAL_ANSWER: self.final_answer,
        }

    def context(self) -> Dict[str, Any]:
        return {
            "agent": "controller",
            "candidate_attacks": self.candidate_attacks,
            "target": self.target.prompt_view(),
        }

    def dispatch(self, plan: ActionPlan) -> StepOutcome:
        return self._handlers[plan.action](plan.action_input)

    # --- actions ---

    def determine(self, action_input: Dict[str, Any]) -> StepOutcome:
        candidates = action_input.get("candidates") or self.candidate_attacks
        if isinstance(candidates, str):
            candidates = [c.strip() for c in candidates.split(",") if c.strip()]
        self.confirmed, self.excluded = determine_attacks(list(candidates), self.target, self.env_dir)
        lines = [f"confirmed: {', '.join(self.confirmed) or '(none)'}"]
        lines += [f"excluded: {attack} ({reason})" for attack, reason in self.excluded.items()]
        return StepOutcome("\n".join(lines))

    def allowance(self, n_agents: int) -> Optional[int]:
        """Even share of the budget not yet handed out, across n_agents still to launch"""
        budget = self.target.query_budget or self.run_config.query_budget
        if budget is None or n_agents == 0:
            return None
        return (budget - self._allocated) // n_agents

    def launch(self, action_input: Dict[str, Any]) -> StepOutcome:
        requested = action_input.get("attacks") or []
        if isinstance(requested, str):
            requested = [a.strip() for a in requested.split(",") if a.strip()]
        if not self.confirmed:
            return StepOutcome("error: no attacks have been confirmed; nothing can be launched", ERROR_BAD_PLAN)
        unique = list(dict.fromkeys(requested))
        if len(unique) < len(requested):
            logger.warning("duplicate attacks in launch request: %s", requested)
        notes = []
        to_launch = []
        for attack in unique:
            if attack in self.agents:
                notes.append(f"{attack} is already running")
            elif attack not in self.confirmed:
                notes.append(f"{attack} was not confirmed and is not launched")
            else:
                to_launch.append(attack)
        if not to_launch:
            return StepOutcome("\n".join(["error: no confirmed attack to launch", *notes]), ERROR_BAD_PLAN)

        # share among every confirmed attack that has no agent yet, this launch included
        unlaunched = [a for a in self.confirmed if a not in self.agents]
        allowance = self.allowance(len(unlaunched))
        if allowance is not None:
            self._allocated += allowance * len(to_launch)
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=len(self.confirmed), thread_name_prefix="attack")
        for attack in to_launch:
            agent = self.agent_factory(attack, allowance)
            self.agents[attack] = agent
            self.futures[attack] = self._executor.submit(agent.run)
            logger.info("launched %s (allowance %s)", attack, allowance)
        lines = [f"launched: {', '.join(to_launch)}"]
        if allowance is not None:
            lines.append(f"query allowance per agent: {allowance}")
        lines += notes
        return StepOutcome("\n".join(lines))

    def statuses(self) -> List[Dict[str, Any]]:
        return [self.agents[a].status.snapshot() for a in self.agents]

    def all_terminal(self) -> bool:
        return bool(self.agents) and all(agent.status.terminal for agent in self.agents.values())

    def between_steps(self):
        """Pause up to one poll interval while attack agents are still running"""
        pending = [f for f in self.futures.values() if not f.done()]
        if pending and self.run_config.poll_interval_s > 0:
            wait(pending, timeout=self.run_config.poll_interval_s)

    def monitor(self, action_input: Dict[str, Any]) -> StepOutcome:
        if not self.agents:
            return StepOutcome("error: no attack agents have been launched\nall terminal: no", ERROR_BAD_PLAN)
        lines = [f"all terminal: {'yes' if self.all_terminal() else 'no'}"]
        for snapshot in self.statuses():
            line = f"- {snapshot['attack']}: {snapshot['state']} ({snapshot['steps']} steps)"
            if snapshot["reason"]:
                line += f": {snapshot['reason'].splitlines()[0]}"
            lines.append(line)
        return StepOutcome("\n".join(lines))

    def final_answer(self, action_input: Dict[str, Any]) -> StepOutcome:
        if self.confirmed is None:
            return StepOutcome("error: attacks have not been determined yet; the assessment cannot end "
                               "without performing any attack", ERROR_BAD_PLAN)
        if self.confirmed and not self.agents:
            return StepOutcome("error: attacks were confirmed but none was launched; the assessment cannot "
                               "end without performing any attack", ERROR_BAD_PLAN)
        running = [s["attack"] for s in self.statuses() if s["state"] not in ("completed", "failed")]
        if running:
            return StepOutcome(f"error: attack agents are still running: {', '.join(running)}; "
                               "monitor them until they finish", ERROR_BAD_PLAN)
        self.final_answer_given = True
        return StepOutcome("assessment finished; assembling the report", terminal=True)

    def on_finish(self, state: AgentState, reason: Optional[str]):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
        complete = self.is_complete()
        self.trace.run_end(
            complete=complete,
            confirmed=self.confirmed or [],
            statuses={a: agent.status.state.value for a, agent in self.agents.items()},
        )

    def is_complete(self) -> bool:
        """Every confirmed attack completed and the final answer was accepted"""
        if not self.final_answer_given:
            return False
        return all(
            a in self.agents and self.agents[a].status.state == AgentState.COMPLETED for a in self.confirmed
        )

    def sections(self) -> list:
        return [self.agents[a].section for a in self.agents if getattr(self.agents[a], "section", None)]
