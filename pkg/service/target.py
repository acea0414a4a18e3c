"""
Owner side of the audited system: target training, the evaluation bundle,
and the service configuration.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from core.errors import PreconditionError
from core.nn import (
    Model, TrainConfig, evaluate, fit_batch_size, init_model, load_bundle, predict_labels,
    save_bundle, save_model, train,
)
from env.registry import ModelRecord
from env.synthetic import Dataset

logger = logging.getLogger(__name__)

KIND_EVALUATION = "evaluation"
TARGET_LINEAGE_TAG = "split:target"


class ServiceConfig(BaseModel):
    """How one target model is exposed"""
    artifact_path: str = Field(..., description="Model artifact served by the endpoints")
    expose_embedding: bool = Field(False, description="Serve /embedding as well as /predict")
    query_budget: Optional[int] = Field(None, ge=1, description="Maximum scored input rows")
    host: str = "127.0.0.1"
    port: int = Field(0, ge=0, description="0 picks a free port")
    max_batch_rows: int = Field(256, ge=1, description="Largest batch accepted per request")


@dataclass
class TargetTrainingReport:
    artifact_path: str
    train_accuracy: float
    holdout_accuracy: Optional[float]
    final_loss: float
    epochs: int


def train_target(
    partition: Dataset,
    record: ModelRecord,
    config: TrainConfig,
    artifact_path,
    holdout: Optional[Dataset] = None,
    model_seed: int = 0,
) -> Tuple[Model, TargetTrainingReport]:
    """Train a target on a target-half partition and write its artifact"""
    if not any(tag.startswith(TARGET_LINEAGE_TAG) for tag in partition.lineage):
        raise PreconditionError(
            f"target models train on the target half only; lineage is {partition.lineage}"
        )
    sizes = record.layer_sizes(partition.n_features, partition.n_classes)
    model = init_model(sizes, model_seed)
    model, history = train(model, partition.as_batch(), fit_batch_size(config, len(partition)))
    train_acc = evaluate(model, partition.as_batch())
    holdout_acc = evaluate(model, holdout.as_batch()) if holdout is not None and len(holdout) else None
    metadata = {
        "architecture": record.name,
        "dataset": partition.name,
        "lineage": partition.lineage,
        "train_rows": len(partition),
        "train_config": config.model_dump(mode="json"),
        "train_accuracy": train_acc,
        "holdout_accuracy": holdout_acc,
    }
    path = save_model(model, artifact_path, metadata)
    logger.info("trained target %s on %d rows: train_acc=%.3f holdout_acc=%s",
                record.name, len(partition), train_acc, holdout_acc)
    return model, TargetTrainingReport(
        artifact_path=str(path),
        train_accuracy=train_acc,
        holdout_accuracy=holdout_acc,
        final_loss=history[-1],
        epochs=config.epochs,
    )


@dataclass
class EvaluationBundle:
    """
    Owner-held data used only to score attacks.

    Members come from the target training rows, non-members from the target
    holdout. Scored inputs are training rows used to judge reconstruction.
    """
    member_inputs: np.ndarray
    member_labels: np.ndarray
    nonmember_inputs: np.ndarray
    nonmember_labels: np.ndarray
    scored_inputs: np.ndarray
    steal_inputs: np.ndarray
    steal_labels: np.ndarray
    steal_reference: np.ndarray
    attribute_name: Optional[str] = None
    attribute_inputs: Optional[np.ndarray] = None
    attribute_labels: Optional[np.ndarray] = None
    attribute_classes: Optional[int] = None

    def save(self, path) -> Path:
        arrays = {
            "member_inputs": self.member_inputs,
            "member_labels": self.member_labels,
            "nonmember_inputs": self.nonmember_inputs,
            "nonmember_labels": self.nonmember_labels,
            "scored_inputs": self.scored_inputs,
            "steal_inputs": self.steal_inputs,
            "steal_labels": self.steal_labels,
            "steal_reference": self.steal_reference,
        }
        if self.attribute_name is not None:
            arrays["attribute_inputs"] = self.attribute_inputs
            arrays["attribute_labels"] = self.attribute_labels
        header = {
            "kind": KIND_EVALUATION,
            "attribute_name": self.attribute_name,
            "attribute_classes": self.attribute_classes,
        }
        return save_bundle(path, arrays, header)

    @classmethod
    def load(cls, path) -> "EvaluationBundle":
        arrays, header = load_bundle(path, expected_kind=KIND_EVALUATION)
        return cls(
            **{k: arrays[k] for k in (
                "member_inputs", "member_labels", "nonmember_inputs", "nonmember_labels",
                "scored_inputs", "steal_inputs", "steal_labels", "steal_reference",
            )},
            attribute_name=header.get("attribute_name"),
            attribute_inputs=arrays.get("attribute_inputs"),
            attribute_labels=arrays.get("attribute_labels"),
            attribute_classes=header.get("attribute_classes"),
        )


def build_evaluation_bundle(
    model: Model,
    train_part: Dataset,
    holdout: Dataset,
    seed: int,
    n_members: int = 100,
    n_scored: int = 50,
    n_attribute: int = 100,
    n_steal: int = 200,
    attribute_name: Optional[str] = None,
) -> EvaluationBundle:
    """Draw balanced member/non-member sets plus the reconstruction, attribute and stealing sets"""
    rng = np.random.default_rng(seed)
    n_members = min(n_members, len(train_part), len(holdout))
    members = rng.choice(len(train_part), size=n_members, replace=False)
    holdout_order = rng.permutation(len(holdout))
    nonmembers = holdout_order[:n_members]
    scored = rng.choice(len(train_part), size=min(n_scored, len(train_part)), replace=False)
    steal = holdout_order[:min(n_steal, len(holdout))]
    kwargs: Dict[str, Any] = {}
    if attribute_name is not None:
        attr_rows = holdout_order[-min(n_attribute, len(holdout)):]
        kwargs = {
            "attribute_name": attribute_name,
            "attribute_inputs": holdout.inputs[attr_rows],
            "attribute_labels": holdout.attributes[attribute_name][attr_rows],
            "attribute_classes": holdout.attribute_classes[attribute_name],
        }
    return EvaluationBundle(
        member_inputs=train_part.inputs[members],
        member_labels=train_part.labels[members],
        nonmember_inputs=holdout.inputs[nonmembers],
        nonmember_labels=holdout.labels[nonmembers],
        scored_inputs=train_part.inputs[scored],
        steal_inputs=holdout.inputs[steal],
        steal_labels=holdout.labels[steal],
        steal_reference=predict_labels(model, holdout.inputs[steal]),
        **kwargs,
    )
