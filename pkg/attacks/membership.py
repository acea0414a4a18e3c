"""
Membership inference: a shadow model mimics the target, then either a neural
attack classifier or per-class metric thresholds learned on shadow in/out
posteriors decide membership for target-service posteriors.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from attacks.models import AttackKind, AttackResult
from core.errors import BudgetExhaustedError, PreconditionError
from core.nn import Batch, Model, TrainConfig, evaluate, fit_batch_size, forward, init_model, train
from env.registry import ModelRecord
from env.synthetic import Dataset
from service.client import ServiceClient
from service.target import TARGET_LINEAGE_TAG

logger = logging.getLogger(__name__)

ATTACK_HIDDEN = [64, 64]
ATTACK_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=100)
METRIC_NAMES = ("correctness", "confidence", "entropy", "modified_entropy")


@dataclass
class ShadowRun:
    """A trained shadow model with the rows it was and was not trained on"""
    model: Model
    inside: Batch
    outside: Batch
    train_accuracy: float


@dataclass
class LabeledSet:
    inputs: np.ndarray
    labels: np.ndarray


def _check_preconditions(shadow: Dataset, members: LabeledSet, nonmembers: LabeledSet):
    if any(tag.startswith(TARGET_LINEAGE_TAG) for tag in shadow.lineage):
        raise PreconditionError("shadow data must not come from the target-training half")
    if len(members.labels) != len(nonmembers.labels) or len(members.labels) == 0:
        raise PreconditionError(
            f"member/non-member evaluation sets must be balanced and non-empty "
            f"({len(members.labels)} vs {len(nonmembers.labels)})"
        )


def train_shadow(
    shadow: Dataset,
    record: ModelRecord,
    config: TrainConfig,
    labels: Optional[np.ndarray] = None,
    n_classes: Optional[int] = None,
) -> ShadowRun:
    """Train on the first half of the shadow rows; the second half are the shadow non-members"""
    labels = shadow.labels if labels is None else labels
    n_classes = n_classes or shadow.n_classes
    half = len(shadow) // 2
    if half < 1:
        raise PreconditionError("shadow dataset needs at least 2 rows")
    inside = Batch(shadow.inputs[:half], labels[:half])
    outside = Batch(shadow.inputs[half:2 * half], labels[half:2 * half])
    model = init_model(record.layer_sizes(shadow.n_features, n_classes), config.seed)
    model, _ = train(model, inside, fit_batch_size(config, half))
    return ShadowRun(model=model, inside=inside, outside=outside, train_accuracy=evaluate(model, inside))


def attack_features(posteriors: np.ndarray, labels: np.ndarray, width: int) -> np.ndarray:
    """Top-`width` posteriors sorted descending plus a correctness bit"""
    ranked = -np.sort(-posteriors, axis=1)[:, :width]
    correct = (np.argmax(posteriors, axis=1) == labels).astype(np.float64)
    return np.hstack([ranked, correct[:, None]])


def fit_attack_classifier(member_features: np.ndarray, nonmember_features: np.ndarray, seed: int) -> Model:
    inputs = np.vstack([member_features, nonmember_features])
    targets = np.concatenate([
        np.ones(len(member_features), dtype=np.int64),
        np.zeros(len(nonmember_features), dtype=np.int64),
    ])
    model = init_model([inputs.shape[1], *ATTACK_HIDDEN, 2], seed)
    config = fit_batch_size(ATTACK_TRAIN.model_copy(update={"seed": seed}), len(targets))
    model, _ = train(model, Batch(inputs, targets), config)
    return model


def membership_accuracy(member_predictions: np.ndarray, nonmember_predictions: np.ndarray) -> float:
    """Balanced accuracy of boolean member decisions"""
    return float(0.5 * (np.mean(member_predictions) + np.mean(~nonmember_predictions)))


def _log_value(probs: np.ndarray, small_value: float = 1e-30) -> np.ndarray:
    return -np.log(np.maximum(probs, small_value))


def _entr_comp(probs: np.ndarray) -> np.ndarray:
    return np.sum(probs * _log_value(probs), axis=1)


def _m_entr_comp(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    log_probs = _log_value(probs)
    reverse_probs = 1 - probs
    log_reverse_probs = _log_value(reverse_probs)
    rows = np.arange(labels.size)
    modified_probs = probs.copy()
    modified_probs[rows, labels] = reverse_probs[rows, labels]
    modified_log_probs = log_reverse_probs.copy()
    modified_log_probs[rows, labels] = log_probs[rows, labels]
    return np.sum(modified_probs * modified_log_probs, axis=1)


def metric_scores(posteriors: np.ndarray, labels: np.ndarray) -> Dict[str, np.ndarray]:
    """Member-likeness scores; larger means more likely a member"""
    labels = np.asarray(labels, dtype=np.int64)
    width = posteriors.shape[1]
    in_range = labels < width
    safe = np.where(in_range, labels, 0)
    rows = np.arange(len(labels))
    confidence = np.where(in_range, posteriors[rows, safe], 0.0)
    return {
        "correctness": ((np.argmax(posteriors, axis=1) == labels) & in_range).astype(np.float64),
        "confidence": confidence,
        "entropy": -_entr_comp(posteriors),
        "modified_entropy": -_m_entr_comp(posteriors, safe),
    }


def _thre_setting(tr_values: np.ndarray, te_values: np.ndarray) -> float:
    """Threshold maximizing 0.5 * (members >= t) + 0.5 * (non-members < t) over observed values"""
    value_list = np.concatenate((tr_values, te_values))
    thre, max_acc = 0.0, 0.0
    for value in value_list:
        tr_ratio = np.sum(tr_values >= value) / len(tr_values)
        te_ratio = np.sum(te_values < value) / len(te_values)
        acc = 0.5 * (tr_ratio + te_ratio)
        if acc > max_acc:
            thre, max_acc = value, acc
    return float(thre)


def fit_class_thresholds(
    in_scores: np.ndarray, in_labels: np.ndarray, out_scores: np.ndarray, out_labels: np.ndarray
) -> Tuple[Dict[int, float], float]:
    """Per-class thresholds plus a global fallback for classes the shadow data lacks"""
    fallback = _thre_setting(in_scores, out_scores)
    thresholds = {}
    for c in np.union1d(in_labels, out_labels):
        tr, te = in_scores[in_labels == c], out_scores[out_labels == c]
        if len(tr) and len(te):
            thresholds[int(c)] = _thre_setting(tr, te)
    return thresholds, fallback


def apply_thresholds(scores: np.ndarray, labels: np.ndarray, thresholds: Dict[int, float], fallback: float) -> np.ndarray:
    cut = np.array([thresholds.get(int(c), fallback) for c in labels])
    return scores >= cut


def _query_target(client: ServiceClient, members: LabeledSet, nonmembers: LabeledSet) -> Tuple[np.ndarray, np.ndarray]:
    posteriors = client.predict(np.vstack([members.inputs, nonmembers.inputs]))
    n = len(members.labels)
    return posteriors[:n], posteriors[n:]


def _neural_accuracy(shadow_run: ShadowRun, member_post, nonmember_post, members, nonmembers, seed) -> float:
    width = min(shadow_run.model.output_width, member_post.shape[1])
    in_feats = attack_features(forward(shadow_run.model, shadow_run.inside.inputs).posteriors, shadow_run.inside.targets, width)
    out_feats = attack_features(forward(shadow_run.model, shadow_run.outside.inputs).posteriors, shadow_run.outside.targets, width)
    attack = fit_attack_classifier(in_feats, out_feats, seed)
    member_pred = np.argmax(forward(attack, attack_features(member_post, members.labels, width)).logits, axis=1) == 1
    nonmember_pred = np.argmax(forward(attack, attack_features(nonmember_post, nonmembers.labels, width)).logits, axis=1) == 1
    return membership_accuracy(member_pred, nonmember_pred)


def _metric_accuracies(shadow_run: ShadowRun, member_post, nonmember_post, members, nonmembers) -> Dict[str, float]:
    in_scores = metric_scores(forward(shadow_run.model, shadow_run.inside.inputs).posteriors, shadow_run.inside.targets)
    out_scores = metric_scores(forward(shadow_run.model, shadow_run.outside.inputs).posteriors, shadow_run.outside.targets)
    mem_scores = metric_scores(member_post, members.labels)
    non_scores = metric_scores(nonmember_post, nonmembers.labels)
    accuracies = {}
    for name in METRIC_NAMES:
        if name == "correctness":
            # correctly classified means member; no threshold to learn
            accuracies[name] = membership_accuracy(mem_scores[name] > 0.5, non_scores[name] > 0.5)
            continue
        thresholds, fallback = fit_class_thresholds(
            in_scores[name], shadow_run.inside.targets, out_scores[name], shadow_run.outside.targets
        )
        accuracies[name] = membership_accuracy(
            apply_thresholds(mem_scores[name], members.labels, thresholds, fallback),
            apply_thresholds(non_scores[name], nonmembers.labels, thresholds, fallback),
        )
    return accuracies


def _budget_failure(e: BudgetExhaustedError, queries: int) -> AttackResult:
    return AttackResult(
        kind=AttackKind.MEMBERSHIP_INFERENCE,
        metric_name="accuracy",
        partial=True,
        error=str(e),
        remaining_budget=e.remaining_budget,
        query_count=queries,
    )


def run_membership_inference(
    shadow: Dataset,
    record: ModelRecord,
    config: TrainConfig,
    client: ServiceClient,
    members: LabeledSet,
    nonmembers: LabeledSet,
    labels: Optional[np.ndarray] = None,
    n_classes: Optional[int] = None,
    neural: bool = True,
    metric: bool = True,
) -> AttackResult:
    """One shadow model feeding the neural attack, the metric attacks, or both"""
    _check_preconditions(shadow, members, nonmembers)
    shadow_run = train_shadow(shadow, record, config, labels, n_classes)
    before = client.queries_used
    try:
        member_post, nonmember_post = _query_target(client, members, nonmembers)
    except BudgetExhaustedError as e:
        return _budget_failure(e, client.queries_used - before)

    sub_results: Dict[str, float] = {}
    if metric:
        sub_results.update(_metric_accuracies(shadow_run, member_post, nonmember_post, members, nonmembers))
    if neural:
        sub_results["neural"] = _neural_accuracy(shadow_run, member_post, nonmember_post, members, nonmembers, config.seed)
    best = max(sub_results, key=sub_results.get)
    logger.info("membership inference: best=%s %.4f", best, sub_results[best])
    return AttackResult(
        kind=AttackKind.MEMBERSHIP_INFERENCE,
        metric_name="accuracy",
        metric_value=sub_results[best],
        sub_results=sub_results,
        query_count=client.queries_used - before,
        remaining_budget=client.remaining_budget,
        details={
            "best_attack": best,
            "shadow_train_accuracy": round(shadow_run.train_accuracy, 4),
            "shadow_rows": 2 * len(shadow_run.inside),
        },
    )


def run_neural_mia(shadow, record, config, client, members, nonmembers, labels=None, n_classes=None) -> AttackResult:
    return run_membership_inference(shadow, record, config, client, members, nonmembers, labels, n_classes, metric=False)


def run_metric_mia(shadow, record, config, client, members, nonmembers, labels=None, n_classes=None) -> AttackResult:
    return run_membership_inference(shadow, record, config, client, members, nonmembers, labels, n_classes, neural=False)
