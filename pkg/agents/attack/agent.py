"""
AttackAgent: carries out one inference attack through the environment's
registries and starter scripts.
"""
import json
import logging
from math import prod
from pathlib import Path
from typing import Any, Dict, List, Optional

from agents.base import (
    ERROR_ACTION, ERROR_BAD_PLAN, ERROR_FABRICATED_METRIC, ERROR_INSTRUCTION, ActionPlan, AgentState, BaseAgent,
    StepOutcome, TargetServiceInfo,
)
from agents.guard import unsupported_numbers
from attacks.manifests import SCRIPTS_DIR, execute_task
from attacks.models import AttackContext, AttackKind, AttackResult, ParameterType, TaskManifest
from core.errors import InfeasibleAttackError, PreconditionError
from env.registry import DatasetRecord, load_dataset_registry, load_model_registry
from knowledge.prompts import (
    ATTACK_ACTIONS, ATTACK_ACTION_SPACES, ATTACK_ROLE, CANDIDATE_ATTACKS, CHECK_REQUIRED_PARAMETERS,
    CHOOSE_ARCHITECTURE_GUIDELINE, CHOOSE_ATTRIBUTE, CHOOSE_ATTRIBUTE_GUIDELINE, CHOOSE_DATASET_GUIDELINE,
    CHOOSE_SHADOW_DATASET, CHOOSE_SHADOW_MODEL_ARCHITECTURE, EXECUTE_SCRIPT, FINAL_ANSWER, LIST_FILES,
    PURPOSE_CHOOSE_ARCHITECTURE, PURPOSE_CHOOSE_ATTRIBUTE, PURPOSE_CHOOSE_DATASET, PURPOSE_SET_PARAMETERS,
    SET_PARAMETERS, SET_PARAMETERS_GUIDELINE,
)
from reporting.report import AttackSection

logger = logging.getLogger(__name__)

LIST_DEPTH = 2
SCHEMA_ERRORS = ("missing required parameter", "unknown parameter", "invalid parameter")


def attack_instruction(attack: str, target: TargetServiceInfo, allowance: Optional[int]) -> str:
    return "\n".join([
        f"Perform the {attack} attack against the target service described below.",
        f"attack: {attack}",
        "environment directory: env (dataset registry, model registry and starter scripts)",
        "workspace directory: workspace",
        f"query allowance: {allowance if allowance is not None else 'unlimited'}",
        "",
        target.describe(),
    ])


class AttackAgent(BaseAgent):
    role = ATTACK_ROLE
    actions = ATTACK_ACTIONS

    def __init__(
        self,
        attack: str,
        planner,
        target: TargetServiceInfo,
        attack_context: AttackContext,
        run_dir,
        run_config,
    ):
        if attack not in ATTACK_ACTION_SPACES:
            raise PreconditionError(f"no action space is defined for {attack!r}")
        self.target = target
        self.attack_context = attack_context
        super().__init__(
            agent_id=attack,
            planner=planner,
            instruction=attack_instruction(attack, target, attack_context.query_allowance),
            action_space=ATTACK_ACTION_SPACES[attack],
            run_dir=run_dir,
            workspace=attack_context.workspace,
            env_dir=attack_context.env_dir,
            run_config=run_config,
            attack=attack,
        )
        self.manifest: Optional[TaskManifest] = None
        self.dataset: Optional[DatasetRecord] = None
        self.target_label: Optional[str] = None
        self.architecture: Optional[str] = None
        self.parameters: Dict[str, Any] = {}
        self.result: Optional[AttackResult] = None
        self.section: Optional[AttackSection] = None
        self.process: List[str] = []
        self._handlers = {
            LIST_FILES: self.list_files,
            CHECK_REQUIRED_PARAMETERS: self.check_required_parameters,
            CHOOSE_SHADOW_DATASET: self.choose_shadow_dataset,
            CHOOSE_ATTRIBUTE: self.choose_attribute,
            CHOOSE_SHADOW_MODEL_ARCHITECTURE: self.choose_architecture,
            SET_PARAMETERS: self.set_parameters,
            EXECUTE_SCRIPT: self.execute_script,
            FINAL_ANSWER: self.final_answer,
        }

    def context(self) -> Dict[str, Any]:
        return {
            "agent": "attack",
            "attack": self.attack,
            "target": self.target.prompt_view(),
            "query_allowance": self.attack_context.query_allowance,
        }

    def dispatch(self, plan: ActionPlan) -> StepOutcome:
        outcome = self._handlers[plan.action](plan.action_input)
        if outcome.error_kind is None and plan.action != FINAL_ANSWER:
            first_line = outcome.observation.splitlines()[0] if outcome.observation else ""
            self.process.append(f"{plan.action}: {self.paths.scrub(first_line)}")
        return outcome

    # --- helpers ---

    def _require(self, action_input: Dict[str, Any], *names: str) -> List[Any]:
        missing = [n for n in names if action_input.get(n) in (None, "")]
        if missing:
            raise PreconditionError(f"missing action input: {', '.join(missing)}")
        return [action_input[n] for n in names]

    def _file(self, shown: str) -> Path:
        path = self.paths.resolve(shown)
        if not path.is_file():
            raise PreconditionError(f"no such file: {shown}")
        return path

    def _dataset_path(self, record: DatasetRecord) -> str:
        return self.paths.display(self.attack_context.env_dir / record.path)

    # --- actions ---

    def list_files(self, action_input: Dict[str, Any]) -> StepOutcome:
        directory, = self._require(action_input, "directory")
        root = self.paths.resolve(directory)
        if not root.is_dir():
            raise PreconditionError(f"no such directory: {directory}")
        lines = [f"directory: {self.paths.display(root)}"]

        def walk(path: Path, depth: int):
            for child in sorted(path.iterdir()):
                if child.is_dir():
                    lines.append(self.paths.display(child) + "/")
                    if depth < LIST_DEPTH:
                        walk(child, depth + 1)
                else:
                    lines.append(self.paths.display(child))

        walk(root, 1)
        if len(lines) == 1:
            lines.append("(empty)")
        return StepOutcome("\n".join(lines))

    def _load_manifest(self, shown: str) -> TaskManifest:
        path = self._file(shown)
        if path.parent.name != SCRIPTS_DIR:
            raise PreconditionError(f"{shown} is not a starter script; scripts live in env/{SCRIPTS_DIR}")
        try:
            return TaskManifest.model_validate_json(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise PreconditionError(f"{shown} is not a valid starter script: {e}") from e

    def check_required_parameters(self, action_input: Dict[str, Any]) -> StepOutcome:
        script, = self._require(action_input, "script")
        manifest = self._load_manifest(script)
        self.manifest = manifest
        optional = [f"{p.name} (default {p.default})" for p in manifest.parameters if not p.required]
        lines = [
            f"script: {script}",
            f"task: {manifest.name}",
            f"purpose: {manifest.purpose}",
            f"required: {', '.join(manifest.required_names)}",
            f"optional: {', '.join(optional) or '(none)'}",
            "parameters:",
        ]
        for p in manifest.parameters:
            candidates = f" candidates {' | '.join(str(c) for c in p.candidates)}" if p.candidates else ""
            lines.append(f"- {p.name} [{p.semantic_type.value}]{candidates}: {p.purpose}")
        if manifest.query_note:
            lines.append(f"queries: {manifest.query_note}")
        return StepOutcome("\n".join(lines))

    def _registry_records(self, shown: str) -> List[DatasetRecord]:
        records = load_dataset_registry(self._file(shown))
        if not records:
            raise PreconditionError(f"the dataset registry {shown} is empty")
        return records

    def choose_shadow_dataset(self, action_input: Dict[str, Any]) -> StepOutcome:
        registry_file, = self._require(action_input, "registry_file")
        records = self._registry_records(registry_file)
        attribute = action_input.get("target_attribute") or None
        reply = self.consult(CHOOSE_DATASET_GUIDELINE, {
            "purpose": PURPOSE_CHOOSE_DATASET,
            "records": [r.model_dump(exclude={"path"}) for r in records],
            "task_description": action_input.get("task_description", ""),
            "input_format": action_input.get("input_format", ""),
            "output_format": action_input.get("output_format", ""),
            "num_classes": self.target.num_classes,
            "target_attribute": attribute,
        })
        name = reply.get("dataset")
        if not name:
            if attribute and not any(r.attribute(attribute) for r in records):
                raise InfeasibleAttackError(f"no dataset in the registry carries the attribute {attribute}")
            raise PreconditionError(f"no dataset was chosen: {reply.get('reason', 'no reason given')}")
        record = next((r for r in records if r.name == name), None)
        if record is None:
            raise PreconditionError(f"{name!r} is not in the dataset registry")
        if attribute and not record.attribute(attribute):
            raise PreconditionError(f"{name} does not carry the attribute {attribute}")
        self.dataset = record
        attributes = ", ".join(f"{a.name} ({a.num_classes} classes)" for a in record.attributes) or "(none)"
        return StepOutcome("\n".join([
            f"selected dataset: {record.name}",
            f"path: {self._dataset_path(record)}",
            f"num_classes: {record.num_classes}",
            f"rows: {record.n_samples}",
            f"attributes: {attributes}",
            f"reason: {reply.get('reason', '')}",
        ]))

    def choose_attribute(self, action_input: Dict[str, Any]) -> StepOutcome:
        registry_file, shadow = self._require(action_input, "registry_file", "shadow_dataset")
        record = next((r for r in self._registry_records(registry_file) if r.name == shadow), None)
        if record is None:
            raise PreconditionError(f"{shadow!r} is not in the dataset registry")
        reply = self.consult(CHOOSE_ATTRIBUTE_GUIDELINE, {
            "purpose": PURPOSE_CHOOSE_ATTRIBUTE,
            "shadow_dataset": record.name,
            "attributes": [a.model_dump() for a in record.attributes],
            "task_description": action_input.get("task_description", ""),
            "output_format": action_input.get("output_format", ""),
            "num_classes": self.target.num_classes,
        })
        names = [n.strip() for n in str(reply.get("attributes") or "").split(",") if n.strip()]
        if not names:
            raise PreconditionError(f"no attribute was chosen: {reply.get('reason', 'no reason given')}")
        unknown = [n for n in names if record.attribute(n) is None]
        if unknown:
            raise PreconditionError(f"{record.name} has no attribute {', '.join(unknown)}")
        combined = prod(record.attribute(n).num_classes for n in names)
        if combined != self.target.num_classes:
            logger.warning("%s: attributes %s give %d classes, target has %s",
                           self.agent_id, names, combined, self.target.num_classes)
        self.target_label = ",".join(names)
        return StepOutcome("\n".join([
            f"selected attributes: {self.target_label}",
            f"combined classes: {combined}",
            f"reason: {reply.get('reason', '')}",
        ]))

    def choose_architecture(self, action_input: Dict[str, Any]) -> StepOutcome:
        registry_file, attack = self._require(action_input, "registry_file", "attack")
        if attack not in CANDIDATE_ATTACKS:
            raise PreconditionError(f"unknown attack {attack!r}")
        records = load_model_registry(self._file(registry_file))
        if not records:
            raise PreconditionError(f"the model registry {registry_file} is empty")
        reply = self.consult(CHOOSE_ARCHITECTURE_GUIDELINE, {
            "purpose": PURPOSE_CHOOSE_ARCHITECTURE,
            "records": [r.model_dump() for r in records],
            "attack": attack,
            "access": action_input.get("access", "predict"),
        })
        record = next((r for r in records if r.name == reply.get("architecture")), None)
        if record is None:
            raise PreconditionError(f"{reply.get('architecture')!r} is not in the model registry")
        self.architecture = record.name
        return StepOutcome("\n".join([
            f"selected architecture: {record.name}",
            f"capacity_rank: {record.capacity_rank}",
            f"hidden_sizes: {record.hidden_sizes}",
            f"reason: {reply.get('reason', '')}",
        ]))

    def set_parameters(self, action_input: Dict[str, Any]) -> StepOutcome:
        task, dataset = self._require(action_input, "task", "dataset")
        if self.manifest is None:
            raise PreconditionError("check the required parameters of the task's script first")
        if task != self.manifest.name:
            raise PreconditionError(f"the checked script is for {self.manifest.name}, not {task}")
        record = self.dataset if self.dataset is not None and self.dataset.name == dataset else None
        if record is None:
            raise PreconditionError(f"{dataset!r} is not the chosen shadow dataset; choose a dataset first")
        known = {
            "dataset_path": self._dataset_path(record),
            "architecture": action_input.get("model") or self.architecture,
            "target_label": self.target_label,
            "attribute": self.target.sensitive_attribute,
        }
        reply = self.consult(SET_PARAMETERS_GUIDELINE, {
            "purpose": PURPOSE_SET_PARAMETERS,
            "task": task,
            "attack": self.attack,
            "parameters": [p.model_dump(mode="json") for p in self.manifest.parameters],
            "known": {k: v for k, v in known.items() if v},
            "dataset_rows": record.n_samples,
            "query_allowance": self.attack_context.query_allowance,
            "intent": action_input.get("purpose", ""),
        })
        chosen = reply.get("parameters") or {}
        if not isinstance(chosen, dict):
            raise PreconditionError("the parameter reply is not a mapping")
        reasons = reply.get("reasons") or {}
        values = {k: v for k, v in chosen.items() if self.manifest.parameter(k) is not None and v is not None}
        self.parameters = values
        lines = [f"task: {task}", f"parameters: {json.dumps(values, sort_keys=True)}"]
        lines += [f"- {k}: {values[k]} ({reasons.get(k, 'no reason given')})" for k in sorted(values)]
        missing = [n for n in self.manifest.required_names if n not in values]
        if missing:
            lines.append(f"unset required parameters: {', '.join(missing)}")
        return StepOutcome("\n".join(lines))

    def _task_parameters(self, manifest: TaskManifest, params: Dict[str, Any]) -> Dict[str, Any]:
        """Dataset paths arrive as shown to the planner; the task wants them relative to env"""
        resolved = dict(params)
        for spec in manifest.parameters:
            value = resolved.get(spec.name)
            if spec.semantic_type == ParameterType.DATASET_PATH and isinstance(value, str) and value.startswith("env/"):
                resolved[spec.name] = value[len("env/"):]
        return resolved

    def execute_script(self, action_input: Dict[str, Any]) -> StepOutcome:
        script, = self._require(action_input, "script")
        params = action_input.get("parameters") or {}
        if not isinstance(params, dict):
            return StepOutcome("error: parameters must be a mapping of parameter name to value", ERROR_INSTRUCTION)
        manifest = self._load_manifest(script)
        try:
            result = execute_task(manifest.name, self._task_parameters(manifest, params), self.attack_context)
        except InfeasibleAttackError as e:
            return StepOutcome(f"error: infeasible: {e}", ERROR_ACTION, terminal=True, failed=True)
        except PreconditionError as e:
            kind = ERROR_INSTRUCTION if str(e).startswith(SCHEMA_ERRORS) else ERROR_ACTION
            return StepOutcome(f"error: {e}", kind)
        self.result = result
        self.parameters = dict(params)
        results_path = self.workspace / "results" / f"{manifest.name}.json"
        results_path.parent.mkdir(parents=True, exist_ok=True)
        results_path.write_text(result.model_dump_json(indent=2), encoding="utf-8")
        return StepOutcome(result.summary() + f"\nresult file: {self.paths.display(results_path)}")

    def final_answer(self, action_input: Dict[str, Any]) -> StepOutcome:
        summary = str(action_input.get("summary") or "")
        outcome = str(action_input.get("outcome") or "completed")
        if outcome == "failed":
            self.section = AttackSection(
                attack=AttackKind(self.attack), status="failed", result=self.result, process=self.process,
                parameters=self.parameters, summary=summary, failure_reason=summary or "the agent gave up",
            )
            return StepOutcome("attack reported as failed", terminal=True, failed=True)
        if self.result is None or self.result.metric_value is None:
            return StepOutcome("error: no attack result exists in the workspace; run Execute Script first",
                               ERROR_BAD_PLAN)
        fabricated = unsupported_numbers(summary, self.sources)
        if fabricated:
            return StepOutcome(
                f"error: the summary cites values that no observation shows: {', '.join(fabricated)}\n"
                "report only values that appear in an observation",
                ERROR_FABRICATED_METRIC,
            )
        self.section = AttackSection(
            attack=AttackKind(self.attack), status="completed", result=self.result, process=self.process,
            parameters=self.parameters, summary=summary,
        )
        return StepOutcome("report section written", terminal=True)

    def on_finish(self, state: AgentState, reason: Optional[str]):
        if self.section is None:
            self.section = AttackSection(
                attack=AttackKind(self.attack), status="failed", result=self.result, process=self.process,
                parameters=self.parameters, failure_reason=reason or "the agent stopped without a report",
            )
        elif state == AgentState.FAILED and self.section.status != "failed":
            self.section = self.section.model_copy(update={"status": "failed", "failure_reason": reason})
