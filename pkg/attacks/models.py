"""
Data models shared by the attack pipelines and the starter-task layer.
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from env.registry import DATASET_REGISTRY_FILE, MODEL_REGISTRY_FILE
from service.client import ServiceClient
from service.target import EvaluationBundle


class AttackKind(str, Enum):
    MEMBERSHIP_INFERENCE = "membership_inference"
    MODEL_STEALING = "model_stealing"
    DATA_RECONSTRUCTION = "data_reconstruction"
    ATTRIBUTE_INFERENCE = "attribute_inference"


class ParameterType(str, Enum):
    DATASET_PATH = "dataset_path"
    ARCHITECTURE = "architecture"
    FLOAT = "float"
    INT = "int"
    TEXT = "text"


class ParameterSpec(BaseModel):
    """One parameter of a starter task"""
    name: str
    semantic_type: ParameterType
    purpose: str
    required: bool = True
    default: Optional[Any] = None
    candidates: List[Any] = Field(default_factory=list, description="Enumerable candidate values")

    @property
    def candidate_count(self) -> Optional[int]:
        return len(self.candidates) or None


class TaskManifest(BaseModel):
    """Parameter manifest of a starter task"""
    name: str
    kind: AttackKind
    purpose: str
    parameters: List[ParameterSpec]
    query_note: str = ""

    @model_validator(mode="after")
    def _check_parameters(self):
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {self.name}: {names}")
        for p in self.parameters:
            if p.required and p.default is not None:
                raise ValueError(f"required parameter {p.name} must not carry a default")
        return self

    def parameter(self, name: str) -> Optional[ParameterSpec]:
        return next((p for p in self.parameters if p.name == name), None)

    @property
    def required_names(self) -> List[str]:
        return [p.name for p in self.parameters if p.required]

    def candidate_counts(self) -> List[int]:
        """k_j for every parameter with enumerable candidates"""
        return [p.candidate_count for p in self.parameters if p.candidate_count]

    def render(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2)


class AttackResult(BaseModel):
    kind: AttackKind
    metric_name: str
    metric_value: Optional[float] = None
    sub_results: Dict[str, float] = Field(default_factory=dict)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    query_count: int = 0
    partial: bool = False
    error: Optional[str] = None
    remaining_budget: Optional[int] = None
    details: Dict[str, Any] = Field(default_factory=dict)

    def summary(self) -> str:
        """Observation text: metrics, artifacts and any error, one item per line"""
        lines = [f"task: {self.kind.value}"]
        lines.append(f"metric: {self.metric_name}")
        if self.metric_value is not None:
            lines.append(f"{self.metric_name}: {self.metric_value!r}")
        for name, value in self.sub_results.items():
            if name == self.metric_name:
                continue
            lines.append(f"{name}: {value!r}")
        lines.append(f"query_count: {self.query_count}")
        if self.remaining_budget is not None:
            lines.append(f"remaining_budget={self.remaining_budget}")
        for name, value in self.details.items():
            lines.append(f"{name}: {value}")
        for name, path in self.artifacts.items():
            lines.append(f"artifact {name}: {path}")
        if self.partial:
            lines.append("partial: true")
        if self.error:
            lines.append(f"error: {self.error}")
        return "\n".join(lines)


@dataclass
class AttackContext:
    """What a pipeline run may touch besides its parameters"""
    client: ServiceClient
    bundle: EvaluationBundle
    env_dir: Path
    workspace: Path
    target_classes: int
    query_allowance: Optional[int] = None
    seed: int = 0
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def datasets_registry(self) -> Path:
        return self.env_dir / DATASET_REGISTRY_FILE

    @property
    def models_registry(self) -> Path:
        return self.env_dir / MODEL_REGISTRY_FILE
