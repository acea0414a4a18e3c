"""
Risk rubric and defense catalog used by the assessment report.

The thresholds are printed in every report so readers can see how a label
was reached.
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

from attacks.models import AttackKind, AttackResult


class RiskLevel(str, Enum):
    LOW = "low"
    ELEVATED = "elevated"
    HIGH = "high"
    UNKNOWN = "unknown"


RISK_RULES = {
    AttackKind.MEMBERSHIP_INFERENCE: {
        "high": {"value": 0.75, "message": "membership of individual records can be inferred reliably"},
        "elevated": {"value": 0.6, "message": "membership inference does better than guessing"},
    },
    AttackKind.MODEL_STEALING: {
        "high": {"value": 0.8, "message": "a surrogate reproduces most of the service's predictions"},
        "elevated": {"value": 0.6, "message": "a surrogate reproduces many of the service's predictions"},
    },
    AttackKind.ATTRIBUTE_INFERENCE: {
        "high": {"value": 0.2, "message": "embeddings reveal the sensitive attribute"},
        "elevated": {"value": 0.1, "message": "embeddings leak part of the sensitive attribute"},
    },
    AttackKind.DATA_RECONSTRUCTION: {
        "high": {"value": 0.5, "message": "inputs can be reconstructed closely from the outputs"},
        "elevated": {"value": 0.9, "message": "outputs carry information about the inputs"},
    },
}

RUBRIC = [
    "membership inference: attack accuracy above 0.6 is elevated, above 0.75 is high (0.5 is guessing)",
    "model stealing: surrogate agreement with the service above 0.6 is elevated, above 0.8 is high",
    "attribute inference: accuracy more than 0.1 above the majority baseline is elevated, more than 0.2 is high",
    "data reconstruction: MSE below 0.9 of the mean-input baseline is elevated, below 0.5 is high",
]

DEFENSES: Dict[AttackKind, List[str]] = {
    AttackKind.MEMBERSHIP_INFERENCE: [
        "Reduce overfitting: regularization, early stopping, or more training data.",
        "Return labels or rounded top-k scores instead of full posteriors.",
        "Train with differential privacy.",
    ],
    AttackKind.MODEL_STEALING: [
        "Enforce a per-client query budget and monitor query distributions.",
        "Return labels or coarse confidence scores instead of full posteriors.",
        "Watermark the model to prove ownership of stolen copies.",
    ],
    AttackKind.DATA_RECONSTRUCTION: [
        "Return labels or rounded top-k scores; fine-grained posteriors help inversion.",
        "Add calibrated noise to the returned scores.",
        "Train with differential privacy.",
    ],
    AttackKind.ATTRIBUTE_INFERENCE: [
        "Do not expose intermediate embeddings to clients.",
        "Train with adversarial objectives that remove the sensitive attribute from representations.",
        "Limit embedding precision and dimensionality.",
    ],
}


def _signal(result: AttackResult) -> Optional[float]:
    """The value the rubric compares against its thresholds"""
    subs = result.sub_results
    if result.kind == AttackKind.MODEL_STEALING:
        return subs.get("agreement", result.metric_value)
    if result.kind == AttackKind.ATTRIBUTE_INFERENCE:
        if result.metric_value is None or "majority_baseline" not in subs:
            return None
        return result.metric_value - subs["majority_baseline"]
    if result.kind == AttackKind.DATA_RECONSTRUCTION:
        baseline = subs.get("mean_input_baseline_mse")
        if result.metric_value is None or not baseline:
            return None
        return result.metric_value / baseline
    return result.metric_value


def risk_level(result: Optional[AttackResult]) -> Tuple[RiskLevel, str]:
    if result is None:
        return RiskLevel.UNKNOWN, "no result"
    signal = _signal(result)
    if signal is None:
        return RiskLevel.UNKNOWN, "the attack produced no usable metric"
    rules = RISK_RULES[result.kind]
    # reconstruction risk grows as the error ratio falls
    lower_is_worse = result.kind == AttackKind.DATA_RECONSTRUCTION
    for level in ("high", "elevated"):
        rule = rules[level]
        hit = signal < rule["value"] if lower_is_worse else signal > rule["value"]
        if hit:
            return RiskLevel(level), rule["message"]
    return RiskLevel.LOW, "the attack did not beat the rubric thresholds"


def defenses_for(kind: AttackKind) -> List[str]:
    return list(DEFENSES[kind])
