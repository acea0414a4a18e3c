"""
Model stealing: label attacker inputs with service posteriors and fit a
surrogate on the soft labels. Under a query allowance the inputs are either
a random subset or picked by proxy uncertainty.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from math import ceil
from typing import Optional

import numpy as np

from attacks.models import AttackKind, AttackResult
from core.errors import BudgetExhaustedError, PreconditionError
from core.nn import Batch, LossKind, Model, TrainConfig, fit_batch_size, forward, init_model, predict_labels, save_model, train
from env.registry import ModelRecord
from service.client import ServiceClient

logger = logging.getLogger(__name__)

SEED_FRACTION = 0.2


class SelectionStrategy(str, Enum):
    ALL = "all"
    RANDOM = "random"
    IMPORTANCE = "importance"


@dataclass
class Selection:
    indices: np.ndarray
    seed_count: int
    seed_posteriors: Optional[np.ndarray] = None


def _soft_train(record: ModelRecord, inputs: np.ndarray, posteriors: np.ndarray, config: TrainConfig) -> Model:
    model = init_model(record.layer_sizes(inputs.shape[1], posteriors.shape[1]), config.seed)
    config = fit_batch_size(config.model_copy(update={"loss_kind": LossKind.SOFT_CE}), len(inputs))
    model, _ = train(model, Batch(inputs, posteriors), config)
    return model


def top2_margin(posteriors: np.ndarray) -> np.ndarray:
    ranked = -np.sort(-posteriors, axis=1)
    if ranked.shape[1] < 2:
        return ranked[:, 0]
    return ranked[:, 0] - ranked[:, 1]


def importance_select(
    candidates: np.ndarray,
    n: int,
    client: ServiceClient,
    proxy_record: ModelRecord,
    proxy_config: TrainConfig,
    seed: int = 0,
) -> Selection:
    """
    Pick n candidates: a random seed fifth labeled through the service trains a
    proxy surrogate, and the rest of the slots go to the candidates the proxy
    is least sure about (smallest top-2 posterior margin).
    """
    total = len(candidates)
    if n > total:
        raise PreconditionError(f"cannot select {n} of {total} candidates")
    if n < 1:
        raise PreconditionError("selection size must be at least 1")
    if n == total:
        return Selection(indices=np.arange(total), seed_count=0)

    rng = np.random.default_rng(seed)
    seed_count = max(1, ceil(SEED_FRACTION * n))
    seed_idx = rng.choice(total, size=seed_count, replace=False)
    seed_post = client.predict(candidates[seed_idx])
    proxy = _soft_train(proxy_record, candidates[seed_idx], seed_post, proxy_config)

    rest = np.setdiff1d(np.arange(total), seed_idx)
    margins = top2_margin(forward(proxy, candidates[rest]).posteriors)
    ranked = rest[np.argsort(margins, kind="stable")][: n - seed_count]
    return Selection(indices=np.concatenate([seed_idx, ranked]), seed_count=seed_count, seed_posteriors=seed_post)


def run_model_stealing(
    shadow_inputs: np.ndarray,
    record: ModelRecord,
    config: TrainConfig,
    client: ServiceClient,
    eval_inputs: np.ndarray,
    eval_labels: np.ndarray,
    reference_predictions: np.ndarray,
    allowance: Optional[int] = None,
    selection: SelectionStrategy = SelectionStrategy.ALL,
    seed: int = 0,
    artifact_path=None,
) -> AttackResult:
    """Reports surrogate accuracy on the owner's evaluation set and agreement with the target"""
    selection = SelectionStrategy(selection)
    shadow_inputs = np.asarray(shadow_inputs, dtype=np.float64)
    n_pool = len(shadow_inputs)
    if n_pool == 0:
        raise PreconditionError("model stealing needs at least one shadow input")
    if allowance is not None and allowance < n_pool and selection == SelectionStrategy.ALL:
        raise PreconditionError(
            f"{n_pool} shadow inputs exceed the query allowance of {allowance}; "
            f"set selection_strategy to 'random' or 'importance'"
        )
    n_query = n_pool if selection == SelectionStrategy.ALL else min(n_pool, allowance or n_pool)
    before = client.queries_used

    try:
        if selection == SelectionStrategy.IMPORTANCE:
            picked = importance_select(shadow_inputs, n_query, client, record, config, seed)
        elif selection == SelectionStrategy.RANDOM and n_query < n_pool:
            rng = np.random.default_rng(seed)
            picked = Selection(indices=rng.choice(n_pool, size=n_query, replace=False), seed_count=0)
        else:
            picked = Selection(indices=np.arange(n_pool), seed_count=0)
        inputs = shadow_inputs[picked.indices]
        labeled = client.predict(inputs[picked.seed_count:])
        if picked.seed_posteriors is not None:
            labeled = np.vstack([picked.seed_posteriors, labeled])
    except BudgetExhaustedError as e:
        return AttackResult(
            kind=AttackKind.MODEL_STEALING,
            metric_name="accuracy",
            partial=True,
            error=str(e),
            remaining_budget=e.remaining_budget,
            query_count=client.queries_used - before,
            details={"selection_strategy": selection.value},
        )

    surrogate = _soft_train(record, inputs, labeled, config)
    predicted = predict_labels(surrogate, eval_inputs)
    accuracy = float(np.mean(predicted == eval_labels))
    agreement = float(np.mean(predicted == reference_predictions))
    artifacts = {}
    if artifact_path is not None:
        artifacts["surrogate"] = str(save_model(surrogate, artifact_path, {"attack": "model_stealing"}))
    logger.info("model stealing (%s, %d queries): accuracy=%.4f agreement=%.4f",
                selection.value, len(inputs), accuracy, agreement)
    return AttackResult(
        kind=AttackKind.MODEL_STEALING,
        metric_name="accuracy",
        metric_value=accuracy,
        sub_results={"accuracy": accuracy, "agreement": agreement},
        query_count=client.queries_used - before,
        remaining_budget=client.remaining_budget,
        details={"selection_strategy": selection.value, "training_rows": len(inputs)},
        artifacts=artifacts,
    )
