"""
Attribute inference from service embeddings with a small fully connected
attack model.
"""
import logging
from typing import Optional

import numpy as np

from attacks.models import AttackKind, AttackResult
from core.errors import BudgetExhaustedError, InfeasibleAttackError, PreconditionError
from core.nn import Batch, TrainConfig, evaluate, fit_batch_size, init_model, train
from env.synthetic import Dataset
from service.client import ServiceClient

logger = logging.getLogger(__name__)

ATTACK_HIDDEN = [64]


def majority_baseline(labels: np.ndarray) -> float:
    counts = np.bincount(np.asarray(labels, dtype=np.int64))
    return float(counts.max() / counts.sum())


def run_attribute_inference(
    shadow: Dataset,
    attribute: str,
    config: TrainConfig,
    client: ServiceClient,
    eval_inputs: np.ndarray,
    eval_labels: np.ndarray,
    dataset_size: Optional[int] = None,
) -> AttackResult:
    if client.embedding_url is None:
        raise InfeasibleAttackError("the service exposes no embedding endpoint")
    if attribute not in shadow.attributes:
        raise PreconditionError(f"shadow dataset {shadow.name} does not carry attribute {attribute!r}")
    rows = len(shadow) if dataset_size is None else min(dataset_size, len(shadow))
    shadow_inputs = shadow.inputs[:rows]
    shadow_labels = shadow.attributes[attribute][:rows]
    n_values = shadow.attribute_classes[attribute]

    before = client.queries_used
    try:
        shadow_emb = client.embed(shadow_inputs)
        eval_emb = client.embed(eval_inputs)
    except BudgetExhaustedError as e:
        return AttackResult(
            kind=AttackKind.ATTRIBUTE_INFERENCE,
            metric_name="accuracy",
            partial=True,
            error=str(e),
            remaining_budget=e.remaining_budget,
            query_count=client.queries_used - before,
        )

    # standardize with statistics of the attacker's own embeddings
    mean, std = shadow_emb.mean(axis=0), shadow_emb.std(axis=0) + 1e-8
    model = init_model([shadow_emb.shape[1], *ATTACK_HIDDEN, n_values], config.seed)
    model, _ = train(model, Batch((shadow_emb - mean) / std, shadow_labels), fit_batch_size(config, rows))
    accuracy = evaluate(model, Batch((eval_emb - mean) / std, eval_labels))
    baseline = majority_baseline(eval_labels)
    logger.info("attribute inference on %s: accuracy=%.4f baseline=%.4f", attribute, accuracy, baseline)
    return AttackResult(
        kind=AttackKind.ATTRIBUTE_INFERENCE,
        metric_name="accuracy",
        metric_value=accuracy,
        sub_results={"accuracy": accuracy, "majority_baseline": baseline},
        query_count=client.queries_used - before,
        remaining_budget=client.remaining_budget,
        details={"attribute": attribute, "shadow_rows": rows},
    )
