"""
Starter tasks: one manifest per attack, materialised as files under the
environment's ``scripts/`` directory, and dispatch from a parameter mapping
to the matching pipeline.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List

from attacks.attribute import run_attribute_inference
from attacks.membership import LabeledSet, run_membership_inference
from attacks.models import AttackContext, AttackKind, AttackResult, ParameterSpec, ParameterType, TaskManifest
from attacks.reconstruction import run_data_reconstruction
from attacks.stealing import SelectionStrategy, run_model_stealing
from core.errors import PreconditionError, UnknownTaskError
from core.nn import TrainConfig
from env.registry import (
    KIND_TASKS, ModelRecord, TaskRecord, load_dataset_registry, load_model_registry, write_registry,
)
from env.synthetic import combine_attributes, load_dataset

logger = logging.getLogger(__name__)

SCRIPTS_DIR = "scripts"
TASK_REGISTRY_FILE = "tasks.json"
TASK_LABEL = "task"

LEARNING_RATES = [1e-2, 1e-3, 1e-4]
BATCH_SIZES = [32, 64, 128]
EPOCHS = [50, 100, 300]


def _training_parameters(sizes: List[int], size_purpose: str) -> List[ParameterSpec]:
    return [
        ParameterSpec(name="learning_rate", semantic_type=ParameterType.FLOAT,
                      purpose="Adam step size for the trained model", candidates=LEARNING_RATES),
        ParameterSpec(name="batch_size", semantic_type=ParameterType.INT,
                      purpose="Mini-batch size", candidates=BATCH_SIZES),
        ParameterSpec(name="epochs", semantic_type=ParameterType.INT,
                      purpose="Training epochs", candidates=EPOCHS),
        ParameterSpec(name="dataset_size", semantic_type=ParameterType.INT,
                      purpose=size_purpose, candidates=sizes),
    ]


TASKS: Dict[str, TaskManifest] = {
    AttackKind.MEMBERSHIP_INFERENCE.value: TaskManifest(
        name=AttackKind.MEMBERSHIP_INFERENCE.value,
        kind=AttackKind.MEMBERSHIP_INFERENCE,
        purpose="Decide whether given samples were in the target's training data. Trains a shadow model, "
                "then runs the metric-based attacks and a neural attack classifier; reports the highest accuracy.",
        parameters=[
            ParameterSpec(name="shadow_dataset_path", semantic_type=ParameterType.DATASET_PATH,
                          purpose="Path of the shadow dataset, as listed in the dataset registry"),
            ParameterSpec(name="shadow_model_architecture", semantic_type=ParameterType.ARCHITECTURE,
                          purpose="Architecture name from the model registry for the shadow model"),
            ParameterSpec(name="target_label", semantic_type=ParameterType.TEXT, required=False, default=TASK_LABEL,
                          purpose="'task' for the dataset's own label, or attribute names separated by commas "
                                  "to train on their combined label"),
            *_training_parameters([100, 200, 400], "Rows used as shadow members; as many again are shadow non-members"),
        ],
        query_note="Queries the prediction endpoint once per evaluation sample (200 rows).",
    ),
    AttackKind.MODEL_STEALING.value: TaskManifest(
        name=AttackKind.MODEL_STEALING.value,
        kind=AttackKind.MODEL_STEALING,
        purpose="Replicate the target's functionality by training a surrogate on the target's posteriors "
                "for shadow inputs.",
        parameters=[
            ParameterSpec(name="shadow_dataset_path", semantic_type=ParameterType.DATASET_PATH,
                          purpose="Path of the dataset whose inputs are sent to the target"),
            ParameterSpec(name="shadow_model_architecture", semantic_type=ParameterType.ARCHITECTURE,
                          purpose="Architecture name from the model registry for the surrogate"),
            ParameterSpec(name="selection_strategy", semantic_type=ParameterType.TEXT, required=False,
                          default=SelectionStrategy.ALL.value, candidates=[s.value for s in SelectionStrategy],
                          purpose="'all' queries every row; 'random' or 'importance' select rows to fit the query allowance"),
            *_training_parameters([100, 300, 500], "Shadow inputs considered for querying"),
        ],
        query_note="Queries the prediction endpoint once per selected shadow input.",
    ),
    AttackKind.DATA_RECONSTRUCTION.value: TaskManifest(
        name=AttackKind.DATA_RECONSTRUCTION.value,
        kind=AttackKind.DATA_RECONSTRUCTION,
        purpose="Reconstruct inputs from the target's outputs with an inversion model trained on auxiliary data.",
        parameters=[
            ParameterSpec(name="auxiliary_dataset_path", semantic_type=ParameterType.DATASET_PATH,
                          purpose="Path of the auxiliary dataset used to train the inversion model"),
            ParameterSpec(name="inversion_model_architecture", semantic_type=ParameterType.ARCHITECTURE,
                          required=False, default="mlp-small",
                          purpose="Architecture name from the model registry for the inversion model"),
            *_training_parameters([100, 300, 500], "Auxiliary rows sent to the target"),
        ],
        query_note="Queries the prediction endpoint once per auxiliary row plus 50 scored training rows.",
    ),
    AttackKind.ATTRIBUTE_INFERENCE.value: TaskManifest(
        name=AttackKind.ATTRIBUTE_INFERENCE.value,
        kind=AttackKind.ATTRIBUTE_INFERENCE,
        purpose="Infer a sensitive attribute from the target's embeddings with a two-layer attack model.",
        parameters=[
            ParameterSpec(name="shadow_dataset_path", semantic_type=ParameterType.DATASET_PATH,
                          purpose="Path of a dataset annotated with the sensitive attribute"),
            ParameterSpec(name="attribute", semantic_type=ParameterType.TEXT,
                          purpose="Name of the sensitive attribute to infer"),
            *_training_parameters([100, 300, 500], "Shadow rows sent to the embedding endpoint"),
        ],
        query_note="Queries the embedding endpoint once per shadow row plus 100 evaluation rows.",
    ),
}


def task_manifest(name: str) -> TaskManifest:
    if name not in TASKS:
        raise UnknownTaskError(f"unknown task {name!r}; registered tasks: {sorted(TASKS)}")
    return TASKS[name]


def write_task_registry(env_dir) -> Path:
    """Write tasks.json plus one scripts/<task>.json manifest per task"""
    env_dir = Path(env_dir)
    scripts = env_dir / SCRIPTS_DIR
    scripts.mkdir(parents=True, exist_ok=True)
    for name, manifest in TASKS.items():
        (scripts / f"{name}.json").write_text(manifest.render() + "\n", encoding="utf-8")
    records = [TaskRecord(name=n, script=f"{SCRIPTS_DIR}/{n}.json", purpose=m.purpose) for n, m in TASKS.items()]
    return write_registry(env_dir / TASK_REGISTRY_FILE, records, KIND_TASKS)


def _coerce(spec: ParameterSpec, value: Any) -> Any:
    try:
        if spec.semantic_type == ParameterType.FLOAT:
            value = float(value)
            if value <= 0:
                raise ValueError("must be positive")
        elif spec.semantic_type == ParameterType.INT:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("must be an integer")
            value = int(value)
            if value < 1:
                raise ValueError("must be at least 1")
        else:
            value = str(value).strip()
            if not value:
                raise ValueError("must not be empty")
    except (TypeError, ValueError) as e:
        raise PreconditionError(f"invalid parameter {spec.name}: {value!r} ({e})") from e
    if spec.candidates and spec.semantic_type == ParameterType.TEXT and value not in spec.candidates:
        raise PreconditionError(f"invalid parameter {spec.name}: {value!r} (choose one of {spec.candidates})")
    return value


def validate_parameters(manifest: TaskManifest, params: Dict[str, Any]) -> Dict[str, Any]:
    """Resolved parameter mapping; the first problem found is raised verbatim"""
    for name in params:
        if manifest.parameter(name) is None:
            raise PreconditionError(f"unknown parameter: {name}")
    resolved = {}
    for spec in manifest.parameters:
        if spec.name not in params or params[spec.name] in (None, ""):
            if spec.required:
                raise PreconditionError(f"missing required parameter: {spec.name}")
            resolved[spec.name] = spec.default
            continue
        resolved[spec.name] = _coerce(spec, params[spec.name])
    return resolved


def _resolve_dataset(context: AttackContext, value: str):
    env_dir = context.env_dir.resolve()
    path = Path(value)
    path = (path if path.is_absolute() else env_dir / path).resolve()
    if env_dir not in path.parents:
        raise PreconditionError(f"{value} is not a dataset of the environment; use a path from the dataset registry")
    known = {(env_dir / r.path).resolve() for r in load_dataset_registry(context.datasets_registry)}
    if path not in known:
        raise PreconditionError(f"{value} is not listed in the dataset registry")
    return load_dataset(path)


def _resolve_model(context: AttackContext, name: str) -> ModelRecord:
    records = load_model_registry(context.models_registry)
    for record in records:
        if record.name == name:
            return record
    raise PreconditionError(f"unknown architecture {name!r}; available: {[r.name for r in records]}")


def _train_config(params: Dict[str, Any], seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=params["learning_rate"],
        batch_size=params["batch_size"],
        epochs=params["epochs"],
        seed=seed,
    )


def _take(dataset, size: int, task: str):
    if size > len(dataset):
        raise PreconditionError(f"dataset_size {size} exceeds the {len(dataset)} rows of {dataset.name} for {task}")
    return dataset.subset(range(size), f"take:{size}")


def _shadow_labels(dataset, target_label: str):
    if target_label == TASK_LABEL:
        return dataset.labels, dataset.n_classes
    names = [n.strip() for n in target_label.split(",") if n.strip()]
    return combine_attributes(dataset, names)


def execute_task(name: str, params: Dict[str, Any], context: AttackContext) -> AttackResult:
    manifest = task_manifest(name)
    resolved = validate_parameters(manifest, params)
    config = _train_config(resolved, context.seed)
    bundle = context.bundle
    artifacts_dir = context.workspace / "artifacts"
    kind = manifest.kind

    if kind == AttackKind.MEMBERSHIP_INFERENCE:
        dataset = _resolve_dataset(context, resolved["shadow_dataset_path"])
        size = resolved["dataset_size"]
        if 2 * size > len(dataset):
            raise PreconditionError(
                f"dataset_size {size} needs {2 * size} shadow rows, {dataset.name} has {len(dataset)}"
            )
        shadow = dataset.subset(range(2 * size), f"take:{2 * size}")
        labels, n_classes = _shadow_labels(shadow, resolved["target_label"])
        return run_membership_inference(
            shadow,
            _resolve_model(context, resolved["shadow_model_architecture"]),
            config,
            context.client,
            LabeledSet(bundle.member_inputs, bundle.member_labels),
            LabeledSet(bundle.nonmember_inputs, bundle.nonmember_labels),
            labels=labels,
            n_classes=n_classes,
        )

    if kind == AttackKind.MODEL_STEALING:
        dataset = _take(_resolve_dataset(context, resolved["shadow_dataset_path"]), resolved["dataset_size"], name)
        return run_model_stealing(
            dataset.inputs,
            _resolve_model(context, resolved["shadow_model_architecture"]),
            config,
            context.client,
            bundle.steal_inputs,
            bundle.steal_labels,
            bundle.steal_reference,
            allowance=context.query_allowance,
            selection=resolved["selection_strategy"],
            seed=context.seed,
            artifact_path=artifacts_dir / "surrogate.npz",
        )

    if kind == AttackKind.DATA_RECONSTRUCTION:
        dataset = _take(_resolve_dataset(context, resolved["auxiliary_dataset_path"]), resolved["dataset_size"], name)
        return run_data_reconstruction(
            dataset.inputs,
            _resolve_model(context, resolved["inversion_model_architecture"]),
            config,
            context.client,
            bundle.scored_inputs,
            artifact_path=artifacts_dir / "inversion.npz",
        )

    if bundle.attribute_name is None:
        raise PreconditionError("no attribute evaluation data was provided for this service")
    if resolved["attribute"] != bundle.attribute_name:
        raise PreconditionError(
            f"attribute {resolved['attribute']!r} is not the sensitive attribute under assessment"
        )
    dataset = _resolve_dataset(context, resolved["shadow_dataset_path"])
    return run_attribute_inference(
        dataset,
        resolved["attribute"],
        config,
        context.client,
        bundle.attribute_inputs,
        bundle.attribute_labels,
        dataset_size=resolved["dataset_size"],
    )


def all_candidate_counts() -> Dict[str, List[int]]:
    return {name: manifest.candidate_counts() for name, manifest in TASKS.items()}
