import json

import numpy as np
import pytest

from attacks.manifests import TASK_REGISTRY_FILE, TASKS, write_task_registry
from core.errors import PreconditionError, RegistryError
from env.fixtures import ATTACKER_MODELS, register_dataset
from env.registry import (
    DATASET_REGISTRY_FILE, MODEL_REGISTRY_FILE, TaskRecord, load_dataset_registry, load_model_registry,
    load_registry, load_task_registry, search_space_size, write_registry,
)
from env.synthetic import (
    AttributeSpec, DatasetSpec, combine_attributes, decode_composite, generate_synthetic_dataset, load_dataset,
    split_dataset,
)


def faces_spec(**overrides) -> DatasetSpec:
    values = dict(
        name="faces", n_samples=400, n_features=16, n_classes=8,
        attributes=[AttributeSpec(name=n, n_classes=2, correlation=1.0) for n in ("smiling", "young", "mouth_open")],
        task_from_attributes=["smiling", "young", "mouth_open"],
        seed=5,
    )
    values.update(overrides)
    return DatasetSpec(**values)


def test_generation_is_deterministic():
    a, b = generate_synthetic_dataset(faces_spec()), generate_synthetic_dataset(faces_spec())
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    c = generate_synthetic_dataset(faces_spec(seed=6))
    assert not np.array_equal(a.inputs, c.inputs)


def test_task_label_is_the_composite_of_its_attributes():
    data = generate_synthetic_dataset(faces_spec())
    codes, n_classes = combine_attributes(data, ["smiling", "young", "mouth_open"])
    assert n_classes == 8
    assert np.array_equal(codes, data.labels)
    row = int(np.flatnonzero(data.labels == 5)[0])
    assert decode_composite(5, [2, 2, 2]) == (1, 0, 1)
    assert (data.attributes["smiling"][row], data.attributes["young"][row], data.attributes["mouth_open"][row]) == (1, 0, 1)


def test_spec_rejects_inconsistent_composites():
    with pytest.raises(ValueError):
        faces_spec(n_classes=6)
    with pytest.raises(ValueError):
        faces_spec(task_from_attributes=["unknown"])


def test_split_is_disjoint_and_complete():
    data = generate_synthetic_dataset(faces_spec())
    parts = split_dataset(data, {"target": 0.5, "shadow": 0.5}, seed=1)
    target, shadow = parts["target"].source_index, parts["shadow"].source_index
    assert not set(target) & set(shadow)
    assert sorted(np.concatenate([target, shadow])) == list(range(len(data)))
    assert parts["target"].lineage[-1] == "split:target@1"


def test_split_fractions_must_sum_to_one():
    data = generate_synthetic_dataset(faces_spec())
    with pytest.raises(PreconditionError):
        split_dataset(data, [0.5, 0.3], seed=0)


def test_combine_attributes_unknown_name():
    data = generate_synthetic_dataset(faces_spec())
    with pytest.raises(PreconditionError):
        combine_attributes(data, ["gender"])


def test_register_dataset_writes_payload_and_entry(tmp_path):
    record = register_dataset(faces_spec(), tmp_path)
    records = load_dataset_registry(tmp_path / DATASET_REGISTRY_FILE)
    assert [r.name for r in records] == ["faces"]
    assert [a.name for a in record.attributes] == ["smiling", "young", "mouth_open"]
    assert len(load_dataset(tmp_path / record.path)) == 400
    assert len(load_model_registry(tmp_path / MODEL_REGISTRY_FILE)) == len(ATTACKER_MODELS)


def test_register_dataset_refuses_duplicates(tmp_path):
    register_dataset(faces_spec(), tmp_path)
    with pytest.raises(RegistryError):
        register_dataset(faces_spec(seed=9), tmp_path)


def test_registry_errors_name_the_field(tmp_path):
    path = tmp_path / DATASET_REGISTRY_FILE
    path.write_text(json.dumps({"format_version": 1, "kind": "datasets",
                                "records": [{"name": "x", "num_classes": 1, "input_size": 4, "path": "x.npz"}]}))
    with pytest.raises(RegistryError) as e:
        load_registry(path)
    assert e.value.field == "num_classes"


def test_registry_rejects_dangling_paths(tmp_path):
    path = tmp_path / DATASET_REGISTRY_FILE
    path.write_text(json.dumps([{"name": "x", "num_classes": 2, "input_size": 4, "path": "missing.npz"}]))
    with pytest.raises(RegistryError) as e:
        load_registry(path)
    assert e.value.field == "path"


def test_registry_version_and_missing_file(tmp_path):
    path = tmp_path / MODEL_REGISTRY_FILE
    path.write_text(json.dumps({"format_version": 2, "kind": "models", "records": []}))
    with pytest.raises(RegistryError):
        load_registry(path)
    with pytest.raises(RegistryError):
        load_registry(tmp_path / "nothing.json")


def test_search_space_size(tmp_path):
    record = register_dataset(faces_spec(), tmp_path)
    write_registry(tmp_path / MODEL_REGISTRY_FILE, ATTACKER_MODELS)
    # (1 task label + 3 attributes) x 3 architectures x 3 x 3 candidates
    assert search_space_size([record], ATTACKER_MODELS, [3, 3]) == 4 * 3 * 9


def test_the_task_registry_loads(tmp_path):
    path = write_task_registry(tmp_path)
    tasks = load_task_registry(path)
    assert [t.name for t in tasks] == list(TASKS)
    assert all((tmp_path / t.script).exists() for t in tasks)
    assert all(isinstance(r, TaskRecord) for r in load_registry(path))


def test_task_records_need_their_manifest(tmp_path):
    path = tmp_path / TASK_REGISTRY_FILE
    path.write_text(json.dumps([{"name": "model_stealing", "script": "scripts/model_stealing.json"}]))
    with pytest.raises(RegistryError) as e:
        load_registry(path)
    assert e.value.field == "script"
