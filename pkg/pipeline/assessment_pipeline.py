"""
Assessment Pipeline
Runs one complete assessment of a target service: controller lifecycle,
attack agents, trace analysis, cost and the report.
"""
import argparse
import json
import logging
import threading
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from agents.attack import AttackAgent
from agents.base import TargetServiceInfo
from agents.config import RunConfig
from agents.controller import ControllerAgent
from attacks.models import AttackContext
from config_loader import get_service_config
from core.clock import get_clock
from core.errors import PreconditionError
from core.llm import PlannerBackend, create_planner
from reporting.analyzer import ErrorFindings, analyze_trace
from reporting.cost import cost_of, format_cost, token_totals
from reporting.report import AttackSection, write_report
from reporting.trace import (
    CONTROLLER_ID, TRACE_DIR, TraceStream, load_observation_archive, load_run_trace, merge_traces, write_findings,
)
from service.client import ServiceClient
from service.target import EvaluationBundle

logger = logging.getLogger(__name__)

INDEX_FILE = "index.json"
_index_lock = threading.Lock()


# ================= Input / Output =================

@dataclass
class ServiceFile:
    """Contents of a service info file: what the user supplies for one assessment"""
    target: TargetServiceInfo
    env_dir: Path
    bundle_path: Path

    @classmethod
    def load(cls, path) -> "ServiceFile":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        base = path.parent
        resolve = lambda p: Path(p) if Path(p).is_absolute() else (base / p)
        return cls(
            target=TargetServiceInfo.model_validate(raw["target"]),
            env_dir=resolve(raw["env_dir"]),
            bundle_path=resolve(raw["bundle_path"]),
        )

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump({
                "target": self.target.model_dump(),
                "env_dir": str(self.env_dir),
                "bundle_path": str(self.bundle_path),
            }, f, indent=2)
        return path


@dataclass
class AssessmentOutput:
    run_dir: Path
    complete: bool
    confirmed: List[str] = field(default_factory=list)
    sections: List[AttackSection] = field(default_factory=list)
    findings: Optional[ErrorFindings] = None
    cost: Decimal = Decimal(0)
    tokens_in: int = 0
    tokens_out: int = 0
    steps: int = 0
    paths: Dict[str, Path] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return {
            "run_dir": str(self.run_dir),
            "complete": self.complete,
            "confirmed": self.confirmed,
            "sections": [s.model_dump(mode="json") for s in self.sections],
            "findings": self.findings.model_dump() if self.findings else None,
            "cost": str(self.cost),
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "steps": self.steps,
            "paths": {k: str(v) for k, v in self.paths.items()},
            "error": self.error,
        }


# ================= Assessment =================

def update_index(workspace_root, run_id: str, entry: Dict[str, Any]) -> Path:
    """Record a run in the workspace manifest index"""
    path = Path(workspace_root) / INDEX_FILE
    with _index_lock:
        index = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"runs": {}}
        index["runs"][run_id] = entry
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _new_run_dir(run_config: RunConfig, run_id: str) -> Path:
    run_dir = Path(run_config.workspace_root) / run_id
    if (run_dir / TRACE_DIR).exists():
        raise PreconditionError(f"run directory {run_dir} already holds traces; choose another run id")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _unreachable(run_dir: Path, target: TargetServiceInfo, run_config: RunConfig) -> AssessmentOutput:
    """Diagnostic run: nothing launched"""
    diagnostic = f"target service unreachable at {target.predict_endpoint}"
    logger.error(diagnostic)
    stream = TraceStream(run_dir, CONTROLLER_ID, get_clock(run_config.clock))
    stream.agent_start(diagnostic, [])
    stream.agent_end("failed", 0, diagnostic)
    stream.run_end(complete=False, confirmed=[], statuses={})
    merge_traces(run_dir)
    paths = write_report(run_dir, [], target.prompt_view(), False, {"error": diagnostic})
    return AssessmentOutput(run_dir=run_dir, complete=False, paths=paths, error=diagnostic)


def run_assessment(
    target: Union[TargetServiceInfo, Dict[str, Any]],
    env_dir,
    bundle_path,
    run_config: Optional[RunConfig] = None,
    planner: Optional[PlannerBackend] = None,
    run_id: Optional[str] = None,
    candidate_attacks: Optional[List[str]] = None,
) -> AssessmentOutput:
    """
    Assess one target service without human intervention.

    Args:
        target: Service description (endpoints, task, formats, optional attribute and budget)
        env_dir: Attacker environment with registries and starter scripts
        bundle_path: Owner-side evaluation bundle used to score the attacks
        run_config: Limits, planner selection and workspace root
        planner: Planner backend; built from run_config.planner when omitted
        run_id: Directory name of the run under the workspace root
        candidate_attacks: Attacks the controller may choose from; all four when omitted

    Returns:
        AssessmentOutput with the report, trace and findings paths
    """
    run_config = run_config or RunConfig.from_config()
    if not isinstance(target, TargetServiceInfo):
        target = TargetServiceInfo.model_validate(target)
    target = target.sanitized()
    env_dir = Path(env_dir).resolve()
    run_id = run_id or f"{target.name}-seed{run_config.seed}"
    run_dir = _new_run_dir(run_config, run_id)

    service_cfg = get_service_config()
    timeout = float(service_cfg.get("request_timeout_s", 30))
    max_rows = int(service_cfg.get("max_batch_rows", 256))
    reachability = ServiceClient(target.predict_endpoint, target.embedding_endpoint, timeout, max_rows)
    if not reachability.ping():
        output = _unreachable(run_dir, target, run_config)
        update_index(run_config.workspace_root, run_id, output.to_dict())
        return output

    planner = planner or create_planner(run_config.planner)
    bundle = EvaluationBundle.load(bundle_path)

    def make_agent(attack: str, allowance: Optional[int]) -> AttackAgent:
        context = AttackContext(
            client=ServiceClient(target.predict_endpoint, target.embedding_endpoint, timeout, max_rows),
            bundle=bundle,
            env_dir=env_dir,
            workspace=run_dir / "agents" / attack,
            target_classes=target.num_classes or int(bundle.member_labels.max()) + 1,
            query_allowance=allowance,
            seed=run_config.seed,
        )
        return AttackAgent(attack, planner, target, context, run_dir, run_config)

    controller = ControllerAgent(planner, target, make_agent, run_dir, env_dir, run_config, candidate_attacks)
    logger.info("assessing %s (run %s, planner %s)", target.name, run_id, planner.tag)
    controller.run()

    trace_path = merge_traces(run_dir)
    records = load_run_trace(run_dir)
    findings = analyze_trace(records, name=run_id, archive=load_observation_archive(run_dir, records))
    tokens_in, tokens_out = token_totals(records)
    cost = cost_of(records, run_config.price_table)
    complete = controller.is_complete()
    order = {a: i for i, a in enumerate(controller.confirmed or [])}
    sections = sorted(controller.sections(), key=lambda s: order.get(s.attack.value, len(order)))

    paths = write_report(run_dir, sections, target.prompt_view(), complete,
                         findings.flags() or None, format_cost(cost, run_config.price_table))
    paths["trace"] = trace_path
    paths["findings"] = write_findings(run_dir / "findings.jsonl", [findings.model_dump()])
    output = AssessmentOutput(
        run_dir=run_dir,
        complete=complete,
        confirmed=list(controller.confirmed or []),
        sections=sections,
        findings=findings,
        cost=cost,
        tokens_in=tokens_in,
        tokens_out=tokens_out,
        steps=findings.steps,
        paths=paths,
    )
    with open(run_dir / INDEX_FILE, "w", encoding="utf-8") as f:
        json.dump(output.to_dict(), f, indent=2)
    update_index(run_config.workspace_root, run_id, {"complete": complete, "run_dir": str(run_dir),
                                                     "report": str(paths["report"])})
    logger.info("run %s finished: complete=%s steps=%d cost=%s", run_id, complete, findings.steps,
                format_cost(cost, run_config.price_table))
    return output


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(description="Assess one target service")
    parser.add_argument("--service", type=str, required=True, help="service info file (target, env_dir, bundle_path)")
    parser.add_argument("--planner", type=str, default=None, help="mock, remote or faulty:<script>")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--run-id", type=str, default=None)
    args = parser.parse_args()

    service = ServiceFile.load(args.service)
    result = run_assessment(service.target, service.env_dir, service.bundle_path,
                            RunConfig.from_config(planner=args.planner, seed=args.seed), run_id=args.run_id)
    print(f"complete: {result.complete}")
    print(f"report: {result.paths.get('report')}")
