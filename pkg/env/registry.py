"""
Environment registries: the dataset and model description files that agent
actions read and summarize for the planner.

File format::

    {"format_version": 1, "kind": "datasets" | "models" | "tasks", "records": [...]}

A bare JSON list is accepted as well; the record kind is then inferred from
the record keys.
"""
import json
from math import prod
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.errors import RegistryError

REGISTRY_FORMAT_VERSION = 1
KIND_DATASETS = "datasets"
KIND_MODELS = "models"
KIND_TASKS = "tasks"
KINDS = (KIND_DATASETS, KIND_MODELS, KIND_TASKS)

DATASET_REGISTRY_FILE = "available_datasets.json"
MODEL_REGISTRY_FILE = "available_models.json"


class AttributeRecord(BaseModel):
    model_config = ConfigDict(extra="allow")

    name: str
    num_classes: int = Field(..., ge=2)


class DatasetRecord(BaseModel):
    """Registry entry for a dataset the attacker may use as shadow data"""
    model_config = ConfigDict(extra="allow")

    name: str = Field(..., description="Dataset name")
    num_classes: int = Field(..., ge=2, description="Number of task classes")
    input_size: int = Field(..., ge=1, description="Width of one input row")
    n_samples: int = Field(0, ge=0, description="Rows in the payload")
    class_names: List[str] = Field(default_factory=list)
    path: str = Field(..., description="Payload path, relative to the registry file")
    common_tasks: str = Field("", description="Free-text description of typical tasks")
    attributes: List[AttributeRecord] = Field(default_factory=list)

    @property
    def label_options(self) -> int:
        """Labels this dataset can supply: the task label plus each attribute"""
        return 1 + len(self.attributes)

    def attribute(self, name: str) -> Optional[AttributeRecord]:
        return next((a for a in self.attributes if a.name == name), None)


class ModelRecord(BaseModel):
    """Registry entry for an architecture the attacker may train"""
    model_config = ConfigDict(extra="allow")

    name: str
    hidden_sizes: List[int] = Field(default_factory=list, description="Hidden layer widths")
    capacity_rank: int = Field(..., ge=1, description="Relative capacity, 1 = smallest")
    overfit_prone: bool = Field(False, description="Capacity beyond what the data supports")
    note: str = ""

    def layer_sizes(self, input_size: int, output_size: int) -> List[int]:
        return [input_size, *self.hidden_sizes, output_size]


class TaskRecord(BaseModel):
    """Registry entry for a starter task and the manifest that describes it"""
    model_config = ConfigDict(extra="allow")

    name: str
    script: str = Field(..., description="Manifest path, relative to the registry file")
    purpose: str = ""


RegistryRecord = Union[DatasetRecord, ModelRecord, TaskRecord]
RECORD_MODELS = {KIND_DATASETS: DatasetRecord, KIND_MODELS: ModelRecord, KIND_TASKS: TaskRecord}


def _field_of(error: ValidationError) -> Optional[str]:
    for err in error.errors():
        if err.get("loc"):
            return ".".join(str(part) for part in err["loc"])
    return None


def _infer_kind(raw: dict) -> str:
    if "script" in raw:
        return KIND_TASKS
    return KIND_MODELS if "hidden_sizes" in raw or "capacity_rank" in raw else KIND_DATASETS


def _parse_record(raw, kind: Optional[str], base_dir: Path) -> RegistryRecord:
    if not isinstance(raw, dict):
        raise RegistryError(f"registry record must be an object, got {type(raw).__name__}")
    kind = kind or _infer_kind(raw)
    model_cls = RECORD_MODELS[kind]
    try:
        record = model_cls.model_validate(raw)
    except ValidationError as e:
        field = _field_of(e)
        raise RegistryError(f"invalid {kind} record {raw.get('name', '?')!r}: field {field!r}: {e.errors()[0]['msg']}", field) from e
    if isinstance(record, DatasetRecord) and not (base_dir / record.path).exists():
        raise RegistryError(f"dataset {record.name!r}: path {record.path!r} does not resolve", "path")
    if isinstance(record, TaskRecord) and not (base_dir / record.script).exists():
        raise RegistryError(f"task {record.name!r}: script {record.script!r} does not resolve", "script")
    return record


def load_registry(path) -> List[RegistryRecord]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = json.load(f)
    except FileNotFoundError as e:
        raise RegistryError(f"registry file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise RegistryError(f"registry file does not parse: {path}: {e}") from e

    kind = None
    if isinstance(content, dict):
        if content.get("format_version") != REGISTRY_FORMAT_VERSION:
            raise RegistryError(f"unsupported registry format_version {content.get('format_version')!r}", "format_version")
        kind = content.get("kind")
        if kind not in KINDS:
            raise RegistryError(f"unknown registry kind {kind!r}", "kind")
        records = content.get("records", [])
    else:
        records = content
    if not isinstance(records, list):
        raise RegistryError("registry records must be a list", "records")
    return [_parse_record(raw, kind, path.parent) for raw in records]


def load_dataset_registry(path) -> List[DatasetRecord]:
    return [r for r in load_registry(path) if isinstance(r, DatasetRecord)]


def load_model_registry(path) -> List[ModelRecord]:
    return [r for r in load_registry(path) if isinstance(r, ModelRecord)]


def load_task_registry(path) -> List[TaskRecord]:
    return [r for r in load_registry(path) if isinstance(r, TaskRecord)]


def write_registry(path, records: Sequence[RegistryRecord], kind: Optional[str] = None) -> Path:
    path = Path(path)
    if kind is None:
        kind = next((k for k, cls in RECORD_MODELS.items() if records and isinstance(records[0], cls)), KIND_DATASETS)
    payload = {
        "format_version": REGISTRY_FORMAT_VERSION,
        "kind": kind,
        "records": [r.model_dump() for r in records],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return path


def search_space_size(
    dataset_registry: Iterable[DatasetRecord],
    model_registry: Iterable[ModelRecord],
    parameter_counts: Iterable[int],
) -> int:
    """Sum of label options over datasets, times model count, times parameter candidates"""
    labels = sum(d.label_options for d in dataset_registry)
    return labels * len(list(model_registry)) * prod(int(k) for k in parameter_counts)
