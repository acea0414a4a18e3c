"""
Trace analyzer: failure taxonomy over recorded runs.

Findings are recomputed from the records themselves (instruction, actions,
action inputs, observations), so traces from any planner can be analyzed,
including ones whose runtime did not flag anything.
"""
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, Field

from agents.guard import input_values, unsupported_inputs, unsupported_numbers
from core.errors import PreconditionError
from knowledge.prompts import FINAL_ANSWER, all_action_names
from reporting.trace import CONTROLLER_ID, TRACE_DIR, by_agent, load_observation_archive, load_run_trace

# (agent, step) -> full observation text
ObservationArchive = Mapping[Tuple[str, int], str]

logger = logging.getLogger(__name__)

DOMINANT_THRESHOLD = 0.7
DOMINANT_MIN_STEPS = 5
CONTEXT_LOSS_REPEATS = 3
OWNER_DATA_MARKERS = ("evaluation.npz", "targets/")


class ErrorFindings(BaseModel):
    trace: str = ""
    steps: int = Field(0, ge=0)
    complete: bool = False
    bad_plan: int = Field(0, ge=0, description="Premature final answers, owner data as shadow data, zero-attack ends")
    instruction_violation: int = Field(0, ge=0, description="Malformed replies and schema-invalid inputs")
    context_loss: int = Field(0, ge=0, description="(error, next action) pairs recurring at least three times")
    hallucination_type1: int = Field(0, ge=0, description="Actions outside the action space")
    hallucination_type2: int = Field(0, ge=0, description="Action inputs with no provenance")
    hallucination_type3: int = Field(0, ge=0, description="Reported values no observation shows")
    dominant_action_fraction: float = Field(0.0, ge=0.0, le=1.0)
    dominant_action: Optional[str] = None
    dominant_agent: Optional[str] = None

    @property
    def dominant_loop(self) -> bool:
        return self.dominant_action_fraction > DOMINANT_THRESHOLD

    def flags(self) -> Dict[str, Any]:
        """Nonzero findings only"""
        counts = {k: getattr(self, k) for k in (
            "bad_plan", "instruction_violation", "context_loss",
            "hallucination_type1", "hallucination_type2", "hallucination_type3",
        )}
        flagged: Dict[str, Any] = {k: v for k, v in counts.items() if v}
        if self.dominant_loop:
            flagged["dominant_action"] = f"{self.dominant_agent}: {self.dominant_action} ({self.dominant_action_fraction:.3f})"
        return flagged

    @property
    def clean(self) -> bool:
        return not self.flags()


def _uses_owner_data(action_input: Dict[str, Any]) -> bool:
    return any(isinstance(v, str) and any(m in v for m in OWNER_DATA_MARKERS) for _, v in input_values(action_input))


def _agent_findings(records: List[Dict[str, Any]], registry: List[str], findings: ErrorFindings,
                    archive: ObservationArchive):
    start = next((r for r in records if r["type"] == "agent_start"), {})
    action_space = start.get("action_space") or registry
    sources = [start.get("instruction", "")]
    steps = [r for r in records if r["type"] == "step"]
    pairs: Counter = Counter()
    actions: Counter = Counter()

    for i, step in enumerate(steps):
        action, action_input = step.get("action") or "", step.get("action_input") or {}
        kind = step.get("error_kind")
        findings.steps += 1
        if action:
            actions[action] += 1
        if kind == "instruction_violation":
            findings.instruction_violation += 1
        if kind == "bad_plan" or _uses_owner_data(action_input):
            findings.bad_plan += 1

        if action and action not in action_space:
            findings.hallucination_type1 += 1
        elif action:
            if unsupported_inputs(action_input, sources):
                findings.hallucination_type2 += 1
            if action == FINAL_ANSWER and start.get("attack") and unsupported_numbers(action_input.get("summary", ""), sources):
                findings.hallucination_type3 += 1

        observation = step.get("observation", "")
        if observation.startswith("error") and i + 1 < len(steps):
            following = steps[i + 1]
            pairs[(observation, following.get("action"), json.dumps(following.get("action_input"), sort_keys=True))] += 1
        # provenance is judged against the full text, not the bounded copy
        sources.append(archive.get((step.get("agent", ""), step.get("step")), observation))

    findings.context_loss += sum(1 for n in pairs.values() if n >= CONTEXT_LOSS_REPEATS)
    if len(steps) >= DOMINANT_MIN_STEPS and actions:
        action, count = actions.most_common(1)[0]
        fraction = count / len(steps)
        if fraction > findings.dominant_action_fraction:
            findings.dominant_action_fraction = fraction
            findings.dominant_action = action
            findings.dominant_agent = records[0].get("agent")


def analyze_trace(
    records: Iterable[Dict[str, Any]],
    name: str = "",
    registry: Optional[List[str]] = None,
    archive: Optional[ObservationArchive] = None,
) -> ErrorFindings:
    """
    Count the failure classes in one run's records.

    Args:
        archive: full observation text per (agent, step); without it the
            bounded observations in the trace are the only evidence.
    """
    records = list(records)
    registry = registry or all_action_names()
    archive = archive or {}
    findings = ErrorFindings(trace=name)
    for agent, agent_records in by_agent(records).items():
        _agent_findings(agent_records, registry, findings, archive)
    run_end = next((r for r in records if r["type"] == "run_end"), None)
    findings.complete = bool(run_end and run_end.get("complete"))
    return findings


def is_run_dir(path: Path) -> bool:
    return (path / TRACE_DIR / f"{CONTROLLER_ID}.jsonl").exists()


def find_runs(root) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise PreconditionError(f"trace directory not found: {root}")
    if is_run_dir(root):
        return [root]
    return sorted(p for p in root.rglob("*") if p.is_dir() and is_run_dir(p))


def analyze_run(run_dir, name: Optional[str] = None) -> ErrorFindings:
    """Analyze a stored run, reading its observation archive"""
    run_dir = Path(run_dir)
    records = load_run_trace(run_dir)
    return analyze_trace(records, name=name or run_dir.name, archive=load_observation_archive(run_dir, records))


def analyze_runs(root) -> List[ErrorFindings]:
    return [analyze_run(run) for run in find_runs(root)]


def run_complete(records: Iterable[Dict[str, Any]]) -> bool:
    return any(r["type"] == "run_end" and r.get("complete") for r in records)


def completion_rate(traces_by_target: Dict[str, List[List[Dict[str, Any]]]]) -> Dict[str, float]:
    """Share of complete runs per target plus an `overall` entry"""
    if not traces_by_target or not any(traces_by_target.values()):
        raise PreconditionError("no traces to compute a completion rate from")
    rates: Dict[str, float] = {}
    done = total = 0
    for target, traces in traces_by_target.items():
        if not traces:
            continue
        complete = sum(run_complete(t) for t in traces)
        rates[target] = complete / len(traces)
        done += complete
        total += len(traces)
    rates["overall"] = done / total
    return rates


def summarize_steps(traces: Iterable[List[Dict[str, Any]]]) -> pd.DataFrame:
    """Steps per attack kind over finished agents; incomplete agents are counted, not averaged"""
    rows = []
    for records in traces:
        for r in records:
            if r["type"] == "agent_end" and r.get("attack"):
                rows.append({"attack": r["attack"], "steps": r["steps"], "completed": r["status"] == "completed"})
    columns = ["attack", "runs", "mean_steps", "min_steps", "max_steps", "incomplete"]
    if not rows:
        return pd.DataFrame(columns=columns)
    df = pd.DataFrame(rows)
    done = df[df["completed"]]
    summary = done.groupby("attack")["steps"].agg(runs="count", mean_steps="mean", min_steps="min", max_steps="max")
    incomplete = df[~df["completed"]].groupby("attack").size().rename("incomplete")
    summary = summary.join(incomplete, how="outer").fillna({"runs": 0, "incomplete": 0})
    summary[["runs", "incomplete"]] = summary[["runs", "incomplete"]].astype(int)
    return summary.reset_index()[columns]
