# Target service: owner-side training, ledger, black-box client
from .ledger import QueryLedger, enforce_budget
from .target import ServiceConfig, EvaluationBundle, train_target, build_evaluation_bundle
from .client import ServiceClient

__all__ = [
    "QueryLedger",
    "enforce_budget",
    "ServiceConfig",
    "EvaluationBundle",
    "train_target",
    "build_evaluation_bundle",
    "ServiceClient",
]
