# Attack pipelines and starter tasks
from .models import AttackContext, AttackKind, AttackResult, ParameterSpec, TaskManifest
from .membership import run_membership_inference, run_metric_mia, run_neural_mia
from .stealing import SelectionStrategy, importance_select, run_model_stealing
from .reconstruction import run_data_reconstruction
from .attribute import run_attribute_inference
from .manifests import TASKS, execute_task, task_manifest, validate_parameters, write_task_registry

__all__ = [
    "AttackContext",
    "AttackKind",
    "AttackResult",
    "ParameterSpec",
    "TaskManifest",
    "run_membership_inference",
    "run_metric_mia",
    "run_neural_mia",
    "SelectionStrategy",
    "importance_select",
    "run_model_stealing",
    "run_data_reconstruction",
    "run_attribute_inference",
    "TASKS",
    "execute_task",
    "task_manifest",
    "validate_parameters",
    "write_task_registry",
]
