"""
Trace stream: append-only JSON lines, one file per agent.

Record types::

    agent_start   {agent, attack, ts, instruction, action_space}
    step          {agent, attack, step, ts, reflection, plan, important_information, action,
                   action_input, observation, observation_digest, observation_path, observation_file,
                   error_kind, input_tokens, output_tokens, context_steps}
    agent_end     {agent, attack, ts, status, steps, reason}
    run_end       {agent, ts, complete, confirmed, statuses}
    finding       {trace, ...ErrorFindings}

`observation` is bounded for the planner; the full text is archived at
`observation_file`, relative to the run directory (`observation_path` is the
same file as the agent saw it named).

Each agent writes only its own stream, so no cross-thread locking is needed
beyond the per-file lock. `merge_traces` puts the controller first and the
attack agents in name order, which keeps merged traces reproducible.
"""
import hashlib
import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

logger = logging.getLogger(__name__)

CONTROLLER_ID = "controller"
TRACE_DIR = "traces"
MERGED_TRACE = "trace.jsonl"


def digest(text: str) -> str:
    return "sha256:" + hashlib.sha256((text or "").encode("utf-8")).hexdigest()


class TraceStream:
    """Writer for one agent's records"""

    def __init__(self, run_dir, agent_id: str, clock, attack: Optional[str] = None):
        self.agent_id = agent_id
        self.attack = attack
        self.clock = clock
        self.path = Path(run_dir) / TRACE_DIR / f"{agent_id}.jsonl"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _write(self, record_type: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        record = {"type": record_type, "agent": self.agent_id, "attack": self.attack, "ts": self.clock.now(), **payload}
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(line + "\n")
        return record

    def agent_start(self, instruction: str, action_space: List[str]):
        return self._write("agent_start", {"instruction": instruction, "action_space": action_space})

    def step(self, **fields):
        return self._write("step", fields)

    def agent_end(self, status: str, steps: int, reason: Optional[str] = None):
        return self._write("agent_end", {"status": status, "steps": steps, "reason": reason})

    def run_end(self, complete: bool, confirmed: List[str], statuses: Dict[str, str]):
        return self._write("run_end", {"complete": complete, "confirmed": confirmed, "statuses": statuses})


def read_trace(path) -> List[Dict[str, Any]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _stream_order(path: Path):
    return (path.stem != CONTROLLER_ID, path.stem)


def merge_traces(run_dir) -> Path:
    """Concatenate the per-agent streams of a run into traces/trace.jsonl"""
    trace_dir = Path(run_dir) / TRACE_DIR
    streams = sorted((p for p in trace_dir.glob("*.jsonl") if p.name != MERGED_TRACE), key=_stream_order)
    merged = trace_dir / MERGED_TRACE
    with open(merged, "w", encoding="utf-8") as out:
        for stream in streams:
            out.write(stream.read_text(encoding="utf-8"))
    return merged


def load_run_trace(run_dir) -> List[Dict[str, Any]]:
    """Merged records of a run; merges on demand"""
    merged = Path(run_dir) / TRACE_DIR / MERGED_TRACE
    if not merged.exists():
        merge_traces(run_dir)
    return read_trace(merged)


def load_observation_archive(run_dir, records: Iterable[Dict[str, Any]]) -> Dict[Tuple[str, int], str]:
    """
    Full observation text per (agent, step), read from the run's archive.

    Steps whose file is missing or no longer matches the recorded digest are
    left out, so callers fall back to the bounded observation in the trace.
    """
    run_dir = Path(run_dir)
    archive: Dict[Tuple[str, int], str] = {}
    for record in records:
        if record.get("type") != "step" or not record.get("observation_file"):
            continue
        path = run_dir / record["observation_file"]
        if not path.is_file():
            continue
        text = path.read_text(encoding="utf-8")
        expected = record.get("observation_digest")
        if expected and digest(text) != expected:
            logger.warning("archived observation %s does not match its digest; ignored", path)
            continue
        archive[(record.get("agent", ""), record["step"])] = text
    return archive


def by_agent(records: Iterable[Dict[str, Any]]) -> Dict[str, List[Dict[str, Any]]]:
    grouped: Dict[str, List[Dict[str, Any]]] = {}
    for record in records:
        grouped.setdefault(record.get("agent", ""), []).append(record)
    return grouped


def write_findings(path, findings: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for finding in findings:
            f.write(json.dumps({"type": "finding", **finding}, sort_keys=True) + "\n")
    return path
