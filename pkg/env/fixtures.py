"""
Desk-scale fixture world: four target services with their shared attacker
environment (dataset registry, model registry, starter scripts).

Each service is generated from its own DatasetSpec. The first half of the
rows trains the target and fills the owner's evaluation bundle; the second
half is published in the environment as attacker-side shadow data.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from attacks.manifests import write_task_registry
from core.errors import RegistryError
from core.nn import TrainConfig
from env.registry import (
    DATASET_REGISTRY_FILE, MODEL_REGISTRY_FILE, AttributeRecord, DatasetRecord, ModelRecord, load_dataset_registry,
    write_registry,
)
from env.synthetic import AttributeSpec, DatasetSpec, generate_synthetic_dataset, save_dataset, split_dataset
from service.target import build_evaluation_bundle, train_target

logger = logging.getLogger(__name__)

N_SAMPLES = 1000
N_FEATURES = 32
TARGET_TRAIN_ROWS = 200
TARGET_ARCHITECTURE = ModelRecord(name="target-mlp", hidden_sizes=[128, 128], capacity_rank=2,
                                  note="owner-side architecture, never published")

ATTACKER_MODELS = [
    ModelRecord(name="mlp-small", hidden_sizes=[64], capacity_rank=1,
                note="one hidden layer of 64 units; fast, limited capacity"),
    ModelRecord(name="mlp-medium", hidden_sizes=[128, 128], capacity_rank=2,
                note="two hidden layers of 128 units; general purpose"),
    ModelRecord(name="mlp-large", hidden_sizes=[256, 256, 256], capacity_rank=3, overfit_prone=True,
                note="three hidden layers of 256 units; overfits desk-scale data"),
]


@dataclass
class ServiceDefinition:
    name: str
    dataset: str
    spec: DatasetSpec
    task_description: str
    input_format: str
    expose_embedding: bool = False
    sensitive_attribute: Optional[str] = None
    publish: bool = True


def service_definitions(seed: int = 0) -> List[ServiceDefinition]:
    binary = lambda name, corr, strength=2.0: AttributeSpec(name=name, n_classes=2, correlation=corr, strength=strength)
    features = f"a row of {N_FEATURES} real-valued features"
    return [
        ServiceDefinition(
            name="synth-objects",
            dataset="objects-public",
            spec=DatasetSpec(
                name="objects-public", n_samples=N_SAMPLES, n_features=N_FEATURES, n_classes=4,
                class_separation=2.0, seed=seed + 11,
                class_names=["cup", "chair", "lamp", "book"],
                common_tasks="object recognition of household objects",
            ),
            task_description="Object recognition: classify household objects into 4 classes.",
            input_format=features,
        ),
        ServiceDefinition(
            name="synth-scenes",
            dataset="scenes-public",
            spec=DatasetSpec(
                name="scenes-public", n_samples=N_SAMPLES, n_features=N_FEATURES, n_classes=6,
                class_separation=2.0, seed=seed + 23,
                class_names=["beach", "forest", "city", "desert", "mountain", "lake"],
                common_tasks="scene recognition of outdoor landscapes",
            ),
            task_description="Scene recognition: classify outdoor scenes into 6 classes.",
            input_format=features,
        ),
        ServiceDefinition(
            name="synth-faces",
            dataset="faces-public",
            spec=DatasetSpec(
                name="faces-public", n_samples=N_SAMPLES, n_features=N_FEATURES, n_classes=8,
                attributes=[
                    binary("smiling", 1.0, 1.0), binary("young", 1.0, 1.0), binary("mouth_open", 1.0, 1.0),
                    binary("gender", 0.9),
                ],
                task_from_attributes=["smiling", "young", "mouth_open"],
                class_separation=1.0, seed=seed + 37,
                common_tasks="facial attribute prediction; face analysis",
            ),
            task_description="Facial attribute prediction: predict the combination of smiling, young and "
                             "mouth open as one of 8 classes.",
            input_format=features,
            expose_embedding=True,
            sensitive_attribute="gender",
        ),
        ServiceDefinition(
            name="synth-ages",
            dataset="ages-public",
            spec=DatasetSpec(
                name="ages-public", n_samples=N_SAMPLES, n_features=N_FEATURES, n_classes=5,
                attributes=[binary("gender", 0.9)],
                class_separation=2.0, seed=seed + 41,
                class_names=["child", "teen", "adult", "middle-aged", "senior"],
                common_tasks="age group estimation from faces",
            ),
            task_description="Age estimation: predict the age group of a face as one of 5 classes.",
            input_format=features,
            expose_embedding=True,
            sensitive_attribute="gender",
        ),
    ]


def control_definition(seed: int = 0) -> ServiceDefinition:
    """Same shape as synth-ages, but gender never reaches the inputs"""
    return ServiceDefinition(
        name="synth-ages-control",
        dataset="ages-control",
        spec=DatasetSpec(
            name="ages-control", n_samples=N_SAMPLES, n_features=N_FEATURES, n_classes=5,
            attributes=[AttributeSpec(name="gender", n_classes=2, correlation=0.0, strength=2.0)],
            class_separation=2.0, seed=seed + 43,
            common_tasks="age group estimation from faces",
        ),
        task_description="Age estimation: predict the age group of a face as one of 5 classes.",
        input_format=f"a row of {N_FEATURES} real-valued features",
        expose_embedding=True,
        sensitive_attribute="gender",
        publish=False,
    )


@dataclass
class FixtureService:
    """A built target: artifact, owner evaluation bundle, and the user-facing description"""
    name: str
    artifact_path: str
    bundle_path: str
    shadow_path: str
    n_classes: int
    expose_embedding: bool
    description: Dict = field(default_factory=dict)
    train_accuracy: float = 0.0
    holdout_accuracy: Optional[float] = None

    def service_info(self, predict_url: str, embedding_url: Optional[str] = None,
                     query_budget: Optional[int] = None) -> Dict:
        """Fields of a TargetServiceInfo for a running copy of this service"""
        return {
            **self.description,
            "predict_endpoint": predict_url,
            "embedding_endpoint": embedding_url if self.expose_embedding else None,
            "query_budget": query_budget,
        }


@dataclass
class FixtureWorld:
    root: Path
    env_dir: Path
    services: Dict[str, FixtureService]
    controls: Dict[str, FixtureService]


def build_service(
    definition: ServiceDefinition,
    root: Path,
    seed: int,
    train_config: Optional[TrainConfig] = None,
    data_dir: Optional[Path] = None,
) -> FixtureService:
    train_config = train_config or TrainConfig(seed=seed)
    dataset = generate_synthetic_dataset(definition.spec)
    halves = split_dataset(dataset, {"target": 0.5, "shadow": 0.5}, seed)
    target_half = halves["target"]
    parts = split_dataset(target_half, {"train": TARGET_TRAIN_ROWS / len(target_half),
                                        "holdout": 1 - TARGET_TRAIN_ROWS / len(target_half)}, seed)

    service_dir = root / "targets" / definition.name
    model, report = train_target(parts["train"], TARGET_ARCHITECTURE, train_config,
                                 service_dir / "model.npz", holdout=parts["holdout"], model_seed=seed)
    bundle = build_evaluation_bundle(model, parts["train"], parts["holdout"], seed,
                                     attribute_name=definition.sensitive_attribute)
    bundle_path = bundle.save(service_dir / "evaluation.npz")
    shadow_path = save_dataset(halves["shadow"], (data_dir or service_dir) / f"{definition.dataset}.npz")

    output_format = (f"posterior probabilities over {definition.spec.n_classes} classes"
                     + (f" ({', '.join(definition.spec.class_names)})" if definition.spec.class_names else ""))
    description = {
        "name": definition.name,
        "task_description": definition.task_description,
        "input_format": definition.input_format,
        "output_format": output_format,
        "num_classes": definition.spec.n_classes,
        "sensitive_attribute": definition.sensitive_attribute,
    }
    service = FixtureService(
        name=definition.name,
        artifact_path=report.artifact_path,
        bundle_path=str(bundle_path),
        shadow_path=str(shadow_path),
        n_classes=definition.spec.n_classes,
        expose_embedding=definition.expose_embedding,
        description=description,
        train_accuracy=report.train_accuracy,
        holdout_accuracy=report.holdout_accuracy,
    )
    with open(service_dir / "service.json", "w", encoding="utf-8") as f:
        json.dump(asdict(service), f, indent=2)
    return service


def _record_of(spec: DatasetSpec, name: str, n_samples: int, payload: Path, env_dir: Path) -> DatasetRecord:
    return DatasetRecord(
        name=name,
        num_classes=spec.n_classes,
        input_size=spec.n_features,
        n_samples=n_samples,
        class_names=spec.class_names,
        path=str(payload.resolve().relative_to(env_dir.resolve())),
        common_tasks=spec.common_tasks,
        attributes=[AttributeRecord(name=a.name, num_classes=a.n_classes) for a in spec.attributes],
        synthetic=True,
    )


def dataset_record(definition: ServiceDefinition, shadow_path: Path, env_dir: Path) -> DatasetRecord:
    return _record_of(definition.spec, definition.dataset, definition.spec.n_samples // 2, shadow_path, env_dir)


def build_environment(env_dir: Path, records: List[DatasetRecord]):
    write_registry(env_dir / DATASET_REGISTRY_FILE, records)
    write_registry(env_dir / MODEL_REGISTRY_FILE, ATTACKER_MODELS)
    write_task_registry(env_dir)


def register_dataset(spec: DatasetSpec, env_dir) -> DatasetRecord:
    """Generate a dataset, store it under env/data and append it to the dataset registry"""
    env_dir = Path(env_dir)
    registry_path = env_dir / DATASET_REGISTRY_FILE
    records = load_dataset_registry(registry_path) if registry_path.exists() else []
    if any(r.name == spec.name for r in records):
        raise RegistryError(f"dataset {spec.name!r} is already registered", "name")
    payload = save_dataset(generate_synthetic_dataset(spec), env_dir / "data" / f"{spec.name}.npz")
    record = _record_of(spec, spec.name, spec.n_samples, payload, env_dir)
    write_registry(registry_path, [*records, record])
    if not (env_dir / MODEL_REGISTRY_FILE).exists():
        write_registry(env_dir / MODEL_REGISTRY_FILE, ATTACKER_MODELS)
        write_task_registry(env_dir)
    logger.info("registered dataset %s (%d rows) in %s", spec.name, spec.n_samples, registry_path)
    return record


def publish_shadow(definition: ServiceDefinition, service: FixtureService, env_dir) -> DatasetRecord:
    """Add the attacker half of a trained service's data to an environment registry"""
    env_dir = Path(env_dir)
    registry_path = env_dir / DATASET_REGISTRY_FILE
    records = load_dataset_registry(registry_path) if registry_path.exists() else []
    if any(r.name == definition.dataset for r in records):
        raise RegistryError(f"dataset {definition.dataset!r} is already registered", "name")
    record = dataset_record(definition, Path(service.shadow_path), env_dir)
    write_registry(registry_path, [*records, record])
    if not (env_dir / MODEL_REGISTRY_FILE).exists():
        write_registry(env_dir / MODEL_REGISTRY_FILE, ATTACKER_MODELS)
        write_task_registry(env_dir)
    return record


def load_service_definition(path) -> ServiceDefinition:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return ServiceDefinition(**{**raw, "spec": DatasetSpec.model_validate(raw["spec"])})


def load_fixture_service(path) -> FixtureService:
    with open(path, "r", encoding="utf-8") as f:
        return FixtureService(**json.load(f))


def build_fixture_world(root, seed: int = 0, train_config: Optional[TrainConfig] = None) -> FixtureWorld:
    root = Path(root)
    env_dir = root / "env"
    data_dir = env_dir / "data"
    services, records = {}, []
    for definition in service_definitions(seed):
        service = build_service(definition, root, seed, train_config, data_dir)
        services[definition.name] = service
        records.append(dataset_record(definition, Path(service.shadow_path), env_dir))
        logger.info("fixture %s: train_acc=%.3f holdout_acc=%s", service.name,
                    service.train_accuracy, service.holdout_accuracy)
    build_environment(env_dir, records)

    control = control_definition(seed)
    controls = {control.name: build_service(control, root, seed, train_config, root / "controls")}
    with open(root / "world.json", "w", encoding="utf-8") as f:
        json.dump({
            "seed": seed,
            "env_dir": str(env_dir),
            "services": {name: asdict(s) for name, s in services.items()},
            "controls": {name: asdict(s) for name, s in controls.items()},
        }, f, indent=2)
    return FixtureWorld(root=root, env_dir=env_dir, services=services, controls=controls)


def load_fixture_world(root) -> FixtureWorld:
    root = Path(root)
    with open(root / "world.json", "r", encoding="utf-8") as f:
        raw = json.load(f)
    return FixtureWorld(
        root=root,
        env_dir=Path(raw["env_dir"]),
        services={name: FixtureService(**s) for name, s in raw["services"].items()},
        controls={name: FixtureService(**s) for name, s in raw["controls"].items()},
    )
