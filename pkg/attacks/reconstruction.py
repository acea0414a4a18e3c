"""
Data reconstruction by model inversion: learn a map from service outputs back
to inputs on auxiliary data, then score it on rows drawn from the target's
training set.
"""
import logging
from dataclasses import dataclass

import numpy as np

from attacks.models import AttackKind, AttackResult
from core.errors import BudgetExhaustedError, PreconditionError
from core.nn import Batch, LossKind, Model, TrainConfig, fit_batch_size, forward, init_model, save_model, train
from env.registry import ModelRecord
from service.client import ServiceClient

logger = logging.getLogger(__name__)


@dataclass
class InversionFeatures:
    """Centred log-posteriors, clipped to the range seen on auxiliary data"""
    low: np.ndarray
    high: np.ndarray

    @staticmethod
    def raw(posteriors: np.ndarray) -> np.ndarray:
        logs = np.log(np.maximum(posteriors, 1e-30))
        return logs - logs.mean(axis=1, keepdims=True)

    @classmethod
    def fit(cls, posteriors: np.ndarray) -> "InversionFeatures":
        feats = cls.raw(posteriors)
        return cls(low=feats.min(axis=0), high=feats.max(axis=0))

    def transform(self, posteriors: np.ndarray) -> np.ndarray:
        return np.clip(self.raw(posteriors), self.low, self.high)


def fit_inversion(record: ModelRecord, features: np.ndarray, targets: np.ndarray, config: TrainConfig) -> Model:
    model = init_model(record.layer_sizes(features.shape[1], targets.shape[1]), config.seed)
    config = fit_batch_size(config.model_copy(update={"loss_kind": LossKind.MSE}), len(features))
    model, _ = train(model, Batch(features, targets), config)
    return model


def run_data_reconstruction(
    auxiliary_inputs: np.ndarray,
    record: ModelRecord,
    config: TrainConfig,
    client: ServiceClient,
    scored_inputs: np.ndarray,
    artifact_path=None,
) -> AttackResult:
    """Scored rows are only used for scoring, never for training"""
    auxiliary_inputs = np.asarray(auxiliary_inputs, dtype=np.float64)
    if auxiliary_inputs.ndim != 2 or len(auxiliary_inputs) == 0:
        raise PreconditionError("data reconstruction needs a non-empty auxiliary input set")
    before = client.queries_used
    try:
        aux_post = client.predict(auxiliary_inputs)
        scored_post = client.predict(scored_inputs)
    except BudgetExhaustedError as e:
        return AttackResult(
            kind=AttackKind.DATA_RECONSTRUCTION,
            metric_name="mse",
            partial=True,
            error=str(e),
            remaining_budget=e.remaining_budget,
            query_count=client.queries_used - before,
        )

    features = InversionFeatures.fit(aux_post)
    inversion = fit_inversion(record, features.transform(aux_post), auxiliary_inputs, config)
    reconstructed = forward(inversion, features.transform(scored_post)).logits
    mse = float(np.mean((reconstructed - scored_inputs) ** 2))
    baseline = float(np.mean((auxiliary_inputs.mean(axis=0) - scored_inputs) ** 2))

    artifacts = {}
    if artifact_path is not None:
        artifacts["inversion_model"] = str(save_model(inversion, artifact_path, {"attack": "data_reconstruction"}))
    logger.info("data reconstruction: mse=%.4f baseline=%.4f", mse, baseline)
    return AttackResult(
        kind=AttackKind.DATA_RECONSTRUCTION,
        metric_name="mse",
        metric_value=mse,
        sub_results={"mse": mse, "mean_input_baseline_mse": baseline},
        query_count=client.queries_used - before,
        remaining_budget=client.remaining_budget,
        artifacts=artifacts,
        details={"auxiliary_rows": len(auxiliary_inputs), "scored_rows": len(scored_inputs)},
    )
