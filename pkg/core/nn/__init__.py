# Dense network kernel
from .model import Model, ForwardPass, init_model, forward, embed, predict_labels, softmax
from .train import Batch, LossKind, TrainConfig, loss_and_grads, train, evaluate, fit_batch_size
from .artifact import save_model, load_model, save_bundle, load_bundle

__all__ = [
    "Model",
    "ForwardPass",
    "init_model",
    "forward",
    "embed",
    "predict_labels",
    "softmax",
    "Batch",
    "LossKind",
    "TrainConfig",
    "loss_and_grads",
    "train",
    "evaluate",
    "fit_batch_size",
    "save_model",
    "load_model",
    "save_bundle",
    "load_bundle",
]
