import json

import numpy as np
import pytest

from attacks.attribute import majority_baseline, run_attribute_inference
from attacks.manifests import EPOCHS, TASKS, execute_task, task_manifest, validate_parameters, write_task_registry
from attacks.membership import (
    LabeledSet, apply_thresholds, fit_class_thresholds, membership_accuracy, metric_scores, run_membership_inference,
)
from attacks.models import AttackContext, AttackKind, ParameterSpec, ParameterType, TaskManifest
from attacks.reconstruction import InversionFeatures, run_data_reconstruction
from attacks.stealing import importance_select, run_model_stealing, top2_margin
from core.errors import InfeasibleAttackError, PreconditionError, UnknownTaskError
from core.nn import Model, TrainConfig
from env.fixtures import (
    ATTACKER_MODELS, TARGET_TRAIN_ROWS, ServiceDefinition, build_service, control_definition, service_definitions,
)
from env.registry import ModelRecord
from env.synthetic import generate_synthetic_dataset, load_dataset, split_dataset
from server import serve
from service.client import ServiceClient
from service.target import EvaluationBundle, ServiceConfig
from conftest import start_service

MEDIUM = ATTACKER_MODELS[1]
SMALL = ATTACKER_MODELS[0]
SHADOW = {
    "synth-objects": "data/objects-public.npz",
    "synth-scenes": "data/scenes-public.npz",
    "synth-faces": "data/faces-public.npz",
    "synth-ages": "data/ages-public.npz",
}
TRAINING = {"learning_rate": 1e-3, "batch_size": 64, "epochs": 100}


def context_for(world, handle, name, workspace, allowance=None, seed=0) -> AttackContext:
    fixture = world.services.get(name) or world.controls[name]
    client = ServiceClient(handle.predict_url, handle.embedding_url if fixture.expose_embedding else None)
    return AttackContext(
        client=client,
        bundle=EvaluationBundle.load(fixture.bundle_path),
        env_dir=world.env_dir,
        workspace=workspace,
        target_classes=fixture.n_classes,
        query_allowance=allowance,
        seed=seed,
    )


# ===== Scoring helpers =====

def test_thresholds_separate_clean_scores():
    thresholds, fallback = fit_class_thresholds(
        np.array([0.9, 0.8]), np.array([0, 0]), np.array([0.1, 0.2]), np.array([0, 0])
    )
    assert thresholds == {0: 0.8}
    assert fallback == 0.8
    members = apply_thresholds(np.array([0.95, 0.85]), np.array([0, 0]), thresholds, fallback)
    nonmembers = apply_thresholds(np.array([0.3, 0.5]), np.array([0, 3]), thresholds, fallback)
    assert membership_accuracy(members, nonmembers) == 1.0


def test_membership_accuracy_is_balanced():
    assert membership_accuracy(np.ones(10, bool), np.ones(30, bool)) == 0.5
    assert membership_accuracy(np.array([True, False]), np.array([False, False])) == 0.75


def test_metric_scores_handle_labels_outside_the_service_output():
    post = np.array([[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]])
    scores = metric_scores(post, np.array([0, 5]))
    assert scores["correctness"].tolist() == [1.0, 0.0]
    assert scores["confidence"].tolist() == [0.7, 0.0]
    assert scores["entropy"][0] < 0
    assert set(scores) == {"correctness", "confidence", "entropy", "modified_entropy"}


def test_modified_entropy_prefers_confident_correct_rows():
    scores = metric_scores(np.array([[0.98, 0.01, 0.01], [0.4, 0.3, 0.3]]), np.array([0, 0]))
    assert scores["modified_entropy"][0] > scores["modified_entropy"][1]


def test_top2_margin_and_majority_baseline():
    np.testing.assert_allclose(top2_margin(np.array([[0.5, 0.3, 0.2], [0.4, 0.4, 0.2]])), [0.2, 0.0])
    assert majority_baseline(np.array([0, 0, 1])) == pytest.approx(2 / 3)


def test_importance_select_bounds():
    candidates = np.zeros((5, 3))
    with pytest.raises(PreconditionError):
        importance_select(candidates, 6, None, SMALL, TrainConfig())
    with pytest.raises(PreconditionError):
        importance_select(candidates, 0, None, SMALL, TrainConfig())
    picked = importance_select(candidates, 5, None, SMALL, TrainConfig())
    assert picked.indices.tolist() == [0, 1, 2, 3, 4]
    assert picked.seed_count == 0


def test_inversion_features_are_centred_and_clipped():
    aux = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]])
    features = InversionFeatures.fit(aux)
    np.testing.assert_allclose(features.transform(aux).sum(axis=1), 0.0, atol=1e-12)
    extreme = features.transform(np.array([[1.0 - 2e-12, 1e-12, 1e-12]]))
    assert np.all(extreme >= features.low) and np.all(extreme <= features.high)


# ===== Manifests =====

def test_unknown_task():
    with pytest.raises(UnknownTaskError):
        task_manifest("gradient_leakage")


def test_every_attack_has_a_manifest():
    assert set(TASKS) == {kind.value for kind in AttackKind}
    assert task_manifest("model_stealing").parameter("epochs").candidates == EPOCHS


def test_unknown_and_missing_parameters():
    manifest = task_manifest("membership_inference")
    with pytest.raises(PreconditionError, match="unknown parameter: shadow_size"):
        validate_parameters(manifest, {"shadow_size": 3})
    with pytest.raises(PreconditionError, match="missing required parameter: shadow_dataset_path"):
        validate_parameters(manifest, {"shadow_model_architecture": "mlp-small"})


def test_parameters_are_coerced_and_defaulted():
    resolved = validate_parameters(task_manifest("data_reconstruction"), {
        "auxiliary_dataset_path": "data/x.npz", "learning_rate": "0.01", "batch_size": "32",
        "epochs": 50.0, "dataset_size": 100,
    })
    assert resolved["inversion_model_architecture"] == "mlp-small"
    assert resolved["learning_rate"] == 0.01
    assert resolved["batch_size"] == 32 and resolved["epochs"] == 50


@pytest.mark.parametrize("name,value", [
    ("learning_rate", -1), ("batch_size", 2.5), ("epochs", "many"), ("selection_strategy", "greedy"),
])
def test_invalid_parameter_values(name, value):
    params = {"shadow_dataset_path": "data/x.npz", "shadow_model_architecture": "mlp-small",
              **TRAINING, "dataset_size": 100, name: value}
    with pytest.raises(PreconditionError, match=f"invalid parameter {name}"):
        validate_parameters(task_manifest("model_stealing"), params)


def test_required_parameters_carry_no_default():
    with pytest.raises(ValueError):
        TaskManifest(name="t", kind=AttackKind.MODEL_STEALING, purpose="p", parameters=[
            ParameterSpec(name="x", semantic_type=ParameterType.INT, purpose="p", default=3),
        ])


def test_candidate_counts():
    assert task_manifest("membership_inference").candidate_counts() == [3, 3, 3, 3]
    assert task_manifest("model_stealing").candidate_counts() == [3, 3, 3, 3, 3]


def test_task_registry_files(tmp_path):
    path = write_task_registry(tmp_path)
    records = json.loads(path.read_text())["records"]
    assert [r["name"] for r in records] == list(TASKS)
    for r in records:
        manifest = json.loads((tmp_path / r["script"]).read_text())
        assert manifest["name"] == r["name"]


# ===== Pipelines against fixture services =====

def test_membership_inference_task(world, services, tmp_path):
    context = context_for(world, services["synth-objects"], "synth-objects", tmp_path)
    result = execute_task("membership_inference", {
        "shadow_dataset_path": SHADOW["synth-objects"], "shadow_model_architecture": "mlp-medium",
        **TRAINING, "dataset_size": 200,
    }, context)
    assert result.error is None
    assert 0.0 <= result.metric_value <= 1.0
    assert result.metric_value == max(result.sub_results.values())
    assert set(result.sub_results) == {"correctness", "confidence", "entropy", "modified_entropy", "neural"}
    assert result.query_count == 200


def test_membership_inference_on_a_composite_label(world, services, tmp_path):
    context = context_for(world, services["synth-faces"], "synth-faces", tmp_path)
    result = execute_task("membership_inference", {
        "shadow_dataset_path": SHADOW["synth-faces"], "shadow_model_architecture": "mlp-small",
        "target_label": "smiling,young,mouth_open", **TRAINING, "dataset_size": 100,
    }, context)
    assert result.error is None
    assert "neural" in result.sub_results


def test_membership_inference_refuses_oversized_shadow_request(world, services, tmp_path):
    context = context_for(world, services["synth-objects"], "synth-objects", tmp_path)
    with pytest.raises(PreconditionError):
        execute_task("membership_inference", {
            "shadow_dataset_path": SHADOW["synth-objects"], "shadow_model_architecture": "mlp-small",
            **TRAINING, "dataset_size": 400,
        }, context)


def test_datasets_must_come_from_the_registry(world, services, tmp_path):
    context = context_for(world, services["synth-objects"], "synth-objects", tmp_path)
    bundle_path = world.services["synth-objects"].bundle_path
    for path in (bundle_path, "data/unlisted.npz"):
        with pytest.raises(PreconditionError):
            execute_task("model_stealing", {
                "shadow_dataset_path": path, "shadow_model_architecture": "mlp-small",
                **TRAINING, "dataset_size": 100,
            }, context)


def test_unknown_architecture(world, services, tmp_path):
    context = context_for(world, services["synth-objects"], "synth-objects", tmp_path)
    with pytest.raises(PreconditionError, match="unknown architecture"):
        execute_task("model_stealing", {
            "shadow_dataset_path": SHADOW["synth-objects"], "shadow_model_architecture": "resnet-152",
            **TRAINING, "dataset_size": 100,
        }, context)


def test_model_stealing_agrees_with_the_target(world, services, tmp_path):
    context = context_for(world, services["synth-objects"], "synth-objects", tmp_path)
    result = execute_task("model_stealing", {
        "shadow_dataset_path": SHADOW["synth-objects"], "shadow_model_architecture": "mlp-medium",
        **TRAINING, "dataset_size": 500,
    }, context)
    assert result.sub_results["agreement"] >= 0.8
    assert result.query_count == 500
    assert (tmp_path / "artifacts" / "surrogate.npz").exists()


def test_model_stealing_needs_a_selection_under_an_allowance(world, services, tmp_path):
    context = context_for(world, services["synth-objects"], "synth-objects", tmp_path, allowance=100)
    params = {"shadow_dataset_path": SHADOW["synth-objects"], "shadow_model_architecture": "mlp-small",
              **TRAINING, "dataset_size": 500}
    with pytest.raises(PreconditionError, match="selection_strategy"):
        execute_task("model_stealing", params, context)
    result = execute_task("model_stealing", {**params, "selection_strategy": "importance"}, context)
    assert result.query_count == 100
    assert result.details["training_rows"] == 100


@pytest.mark.parametrize("name", ["synth-objects", "synth-ages"])
def test_reconstruction_beats_the_mean_input(world, services, tmp_path, name):
    context = context_for(world, services[name], name, tmp_path)
    result = execute_task("data_reconstruction", {
        "auxiliary_dataset_path": SHADOW[name], **TRAINING, "dataset_size": 500,
    }, context)
    assert result.sub_results["mse"] < result.sub_results["mean_input_baseline_mse"]
    assert result.query_count == 500 + len(context.bundle.scored_inputs)


def test_attribute_inference_beats_the_majority_class(world, services, tmp_path):
    context = context_for(world, services["synth-ages"], "synth-ages", tmp_path)
    result = execute_task("attribute_inference", {
        "shadow_dataset_path": SHADOW["synth-ages"], "attribute": "gender", **TRAINING, "dataset_size": 500,
    }, context)
    assert result.sub_results["accuracy"] >= result.sub_results["majority_baseline"] + 0.05
    assert result.query_count == 500 + len(context.bundle.attribute_labels)


def test_attribute_inference_is_infeasible_without_embeddings(world, services):
    handle = services["synth-ages"]
    shadow = load_dataset(world.env_dir / SHADOW["synth-ages"])
    bundle = EvaluationBundle.load(world.services["synth-ages"].bundle_path)
    with pytest.raises(InfeasibleAttackError):
        run_attribute_inference(shadow, "gender", TrainConfig(), ServiceClient(handle.predict_url),
                                bundle.attribute_inputs, bundle.attribute_labels)


def test_attribute_must_be_the_one_under_assessment(world, services, tmp_path):
    context = context_for(world, services["synth-faces"], "synth-faces", tmp_path)
    with pytest.raises(PreconditionError):
        execute_task("attribute_inference", {
            "shadow_dataset_path": SHADOW["synth-faces"], "attribute": "smiling", **TRAINING, "dataset_size": 100,
        }, context)


def test_exhausted_budget_gives_a_partial_result(world, tmp_path):
    handle = start_service(world.services["synth-objects"], budget=150)
    try:
        context = context_for(world, handle, "synth-objects", tmp_path)
        result = execute_task("membership_inference", {
            "shadow_dataset_path": SHADOW["synth-objects"], "shadow_model_architecture": "mlp-small",
            **TRAINING, "dataset_size": 100,
        }, context)
    finally:
        handle.shutdown()
    assert result.partial
    assert result.metric_value is None
    assert result.remaining_budget == 150
    assert "remaining_budget=150" in result.summary()


# ===== Multi-seed behaviour =====

def _hard_definition(seed: int) -> ServiceDefinition:
    base = service_definitions(seed)[0]
    spec = base.spec.model_copy(update={"n_classes": 8, "class_separation": 1.5, "class_names": [],
                                        "name": "objects-hard"})
    return ServiceDefinition(name="synth-objects-hard", dataset="objects-hard", spec=spec,
                             task_description=base.task_description, input_format=base.input_format)


def _mia_accuracy(service, seed: int) -> float:
    handle = start_service(service)
    try:
        bundle = EvaluationBundle.load(service.bundle_path)
        shadow = load_dataset(service.shadow_path).subset(range(400), "take:400")
        result = run_membership_inference(
            shadow, MEDIUM, TrainConfig(epochs=300, seed=seed), ServiceClient(handle.predict_url),
            LabeledSet(bundle.member_inputs, bundle.member_labels),
            LabeledSet(bundle.nonmember_inputs, bundle.nonmember_labels),
        )
    finally:
        handle.shutdown()
    return result.metric_value


@pytest.mark.slow
def test_overfit_targets_leak_more_membership(tmp_path):
    overfit, underfit = [], []
    for seed in range(5):
        definition = _hard_definition(seed)
        long = build_service(definition, tmp_path / f"long{seed}", seed, TrainConfig(epochs=300, seed=seed))
        short = build_service(definition, tmp_path / f"short{seed}", seed, TrainConfig(epochs=5, seed=seed))
        overfit.append(_mia_accuracy(long, seed))
        underfit.append(_mia_accuracy(short, seed))
    assert np.mean(overfit) >= np.mean(underfit) + 0.1


@pytest.mark.slow
def test_membership_is_at_chance_when_no_row_is_a_member(world, services):
    """Both evaluation halves come from the target holdout"""
    fixture = world.services["synth-objects"]
    definition = service_definitions(0)[0]
    target_half = split_dataset(generate_synthetic_dataset(definition.spec), {"target": 0.5, "shadow": 0.5}, 0)["target"]
    holdout = split_dataset(target_half, {"train": TARGET_TRAIN_ROWS / len(target_half),
                                          "holdout": 1 - TARGET_TRAIN_ROWS / len(target_half)}, 0)["holdout"]
    shadow = load_dataset(fixture.shadow_path).subset(range(400), "take:400")
    per_metric = {}
    for seed in range(5):
        order = np.random.default_rng(seed).permutation(len(holdout))
        a, b = order[:150], order[150:300]
        result = run_membership_inference(
            shadow, SMALL, TrainConfig(epochs=50, seed=seed), ServiceClient(services["synth-objects"].predict_url),
            LabeledSet(holdout.inputs[a], holdout.labels[a]), LabeledSet(holdout.inputs[b], holdout.labels[b]),
        )
        for name, value in result.sub_results.items():
            per_metric.setdefault(name, []).append(value)
    for name, values in per_metric.items():
        assert 0.45 <= np.mean(values) <= 0.55, name


@pytest.mark.slow
def test_importance_selection_is_not_worse_than_random(world, services, tmp_path):
    context = context_for(world, services["synth-scenes"], "synth-scenes", tmp_path)
    pool = load_dataset(world.env_dir / SHADOW["synth-scenes"]).inputs
    bundle = context.bundle
    scores = {"random": [], "importance": []}
    for seed in range(5):
        for strategy in scores:
            result = run_model_stealing(
                pool, MEDIUM, TrainConfig(epochs=100, seed=seed), context.client,
                bundle.steal_inputs, bundle.steal_labels, bundle.steal_reference,
                allowance=100, selection=strategy, seed=seed,
            )
            scores[strategy].append(result.sub_results["agreement"])
    assert np.mean(scores["importance"]) >= np.mean(scores["random"]) - 0.02


@pytest.mark.slow
def test_inversion_recovers_inputs_of_an_invertible_target():
    rng = np.random.default_rng(0)
    weights = rng.normal(size=(4, 5))
    weights -= weights.mean(axis=1, keepdims=True)
    toy = Model(layer_sizes=[4, 5], weights=[weights], biases=[rng.normal(size=5)], seed=0)
    handle = serve(ServiceConfig(artifact_path="toy"), model=toy)
    try:
        result = run_data_reconstruction(
            rng.normal(size=(500, 4)),
            ModelRecord(name="linear", hidden_sizes=[], capacity_rank=1),
            TrainConfig(learning_rate=1e-2, batch_size=64, epochs=1000),
            ServiceClient(handle.predict_url),
            0.5 * rng.normal(size=(50, 4)),
        )
    finally:
        handle.shutdown()
    assert result.sub_results["mse"] < 1e-2
    assert result.sub_results["mse"] < 0.05 * result.sub_results["mean_input_baseline_mse"]


@pytest.mark.slow
def test_attribute_inference_on_the_control_stays_at_chance(services):
    """Gender is uncorrelated with the control inputs, so nothing can be learned"""
    spec = control_definition(0).spec.model_copy(update={"n_samples": 2000, "seed": 901})
    data = generate_synthetic_dataset(spec)
    shadow, evaluation = data.subset(range(1000), "shadow"), data.subset(range(1000, 2000), "eval")
    handle = services["synth-ages-control"]
    result = run_attribute_inference(
        shadow, "gender", TrainConfig(epochs=100), ServiceClient(handle.predict_url, handle.embedding_url),
        evaluation.inputs, evaluation.attributes["gender"],
    )
    assert abs(result.sub_results["accuracy"] - result.sub_results["majority_baseline"]) <= 0.05
