"""
Bench Pipeline
Runs a matrix of assessments against fixture services and aggregates
completion rate, attack metrics, steps and cost into one table.

Matrix file:
    {
        "world": "workspace/world",
        "runs": [
            {"service": "synth-objects", "seeds": [0, 1, 2, 3, 4]},
            {"service": "synth-faces", "seeds": [0], "budget": 3000}
        ]
    }
"""
import argparse
import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field
from tqdm import tqdm

from agents.config import RunConfig
from config_loader import get_service_config
from core.errors import PreconditionError
from core.llm import PlannerBackend, create_planner
from env.fixtures import FixtureWorld, load_fixture_world
from pipeline.assessment_pipeline import AssessmentOutput, run_assessment
from reporting.analyzer import completion_rate, summarize_steps
from reporting.trace import load_run_trace
from server import serve
from service.target import ServiceConfig

logger = logging.getLogger(__name__)


# ================= Input / Output =================

class BenchRun(BaseModel):
    service: str = Field(..., description="Fixture service name")
    seeds: List[int] = Field(default_factory=lambda: [0])
    budget: Optional[int] = Field(None, ge=1, description="Query budget enforced by the service")


class BenchMatrix(BaseModel):
    world: str = Field(..., description="Fixture world root")
    runs: List[BenchRun] = Field(default_factory=list)

    @classmethod
    def load(cls, path) -> "BenchMatrix":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            matrix = cls.model_validate(json.load(f))
        if not Path(matrix.world).is_absolute():
            matrix.world = str(path.parent / matrix.world)
        return matrix

    def cells(self) -> List[Dict[str, Any]]:
        return [{"service": r.service, "seed": s, "budget": r.budget} for r in self.runs for s in r.seeds]


@dataclass
class BenchOutput:
    rows: pd.DataFrame
    completion: Dict[str, float]
    steps: pd.DataFrame
    table_path: Optional[Path] = None
    outputs: List[AssessmentOutput] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return {
            "rows": self.rows.to_dict(orient="records"),
            "completion": self.completion,
            "steps": self.steps.to_dict(orient="records"),
            "table_path": str(self.table_path) if self.table_path else None,
        }


# ================= Bench =================

def _run_id(cell: Dict[str, Any]) -> str:
    budget = cell["budget"] if cell["budget"] is not None else "unlimited"
    return f"{cell['service']}-budget{budget}-seed{cell['seed']}"


def _row(cell: Dict[str, Any], output: AssessmentOutput) -> Dict[str, Any]:
    row = {
        **cell,
        "complete": output.complete,
        "steps": output.steps,
        "tokens_in": output.tokens_in,
        "tokens_out": output.tokens_out,
        "cost": float(output.cost),
        "attacks": ",".join(output.confirmed),
    }
    for section in output.sections:
        result = section.result
        value = result.metric_value if result is not None and section.status == "completed" else None
        row[section.attack.value] = value
        if result is not None:
            row[f"{section.attack.value}_queries"] = result.query_count
    return row


def run_cell(
    cell: Dict[str, Any],
    world: FixtureWorld,
    run_config: RunConfig,
    planner: PlannerBackend,
) -> AssessmentOutput:
    """One assessment against a freshly started copy of the service, so every run gets its own ledger"""
    fixture = world.services.get(cell["service"]) or world.controls.get(cell["service"])
    if fixture is None:
        raise PreconditionError(f"unknown fixture service: {cell['service']}")
    service_config = ServiceConfig(
        artifact_path=fixture.artifact_path,
        expose_embedding=fixture.expose_embedding,
        query_budget=cell["budget"],
        port=0,
        max_batch_rows=get_service_config().get("max_batch_rows", 256),
    )
    handle = serve(service_config)
    try:
        target = fixture.service_info(handle.predict_url, handle.embedding_url, cell["budget"])
        return run_assessment(
            target, world.env_dir, fixture.bundle_path,
            run_config.model_copy(update={"seed": cell["seed"]}),
            planner=planner, run_id=_run_id(cell),
        )
    finally:
        handle.shutdown()


def run_bench(
    matrix: BenchMatrix,
    run_config: Optional[RunConfig] = None,
    planner: Optional[PlannerBackend] = None,
    max_workers: int = 4,
) -> BenchOutput:
    """
    Run every cell of the matrix.

    Distinct services run concurrently; cells of the same service run one
    after another.
    """
    cells = matrix.cells()
    if not cells:
        raise PreconditionError("the bench matrix has no runs")
    run_config = run_config or RunConfig.from_config()
    planner = planner or create_planner(run_config.planner)
    world = load_fixture_world(matrix.world)

    by_service: Dict[str, List[Dict[str, Any]]] = defaultdict(list)
    for cell in cells:
        by_service[cell["service"]].append(cell)

    progress = tqdm(total=len(cells), desc="bench")
    results: Dict[str, AssessmentOutput] = {}

    def run_group(group: List[Dict[str, Any]]):
        for cell in group:
            results[_run_id(cell)] = run_cell(cell, world, run_config, planner)
            progress.update(1)

    with ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="bench") as executor:
        for future in [executor.submit(run_group, group) for group in by_service.values()]:
            future.result()
    progress.close()

    outputs = [results[_run_id(cell)] for cell in cells]
    rows = pd.DataFrame([_row(cell, out) for cell, out in zip(cells, outputs)])
    traces_by_target: Dict[str, List[List[Dict[str, Any]]]] = defaultdict(list)
    traces = []
    for cell, out in zip(cells, outputs):
        records = load_run_trace(out.run_dir)
        traces_by_target[cell["service"]].append(records)
        traces.append(records)

    table_path = Path(run_config.workspace_root) / "bench.csv"
    table_path.parent.mkdir(parents=True, exist_ok=True)
    rows.to_csv(table_path, index=False)
    print(f"[Bench] {len(rows)} runs, table written to {table_path}")
    return BenchOutput(
        rows=rows,
        completion=completion_rate(traces_by_target),
        steps=summarize_steps(traces),
        table_path=table_path,
        outputs=outputs,
    )


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(description="Run an assessment matrix over fixture services")
    parser.add_argument("matrix", type=str, help="matrix file")
    parser.add_argument("--planner", type=str, default=None)
    parser.add_argument("--workspace", type=str, default=None)
    args = parser.parse_args()

    output = run_bench(BenchMatrix.load(args.matrix),
                       RunConfig.from_config(planner=args.planner, workspace_root=args.workspace))
    print(output.rows.to_string(index=False))
    print(json.dumps(output.completion, indent=2))
