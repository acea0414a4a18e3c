"""
Losses, analytic gradients, Adam training and accuracy.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field

from core.errors import NumericalError, PreconditionError, ShapeError, TrainingDivergedError
from core.nn.model import Model, as_inputs, forward, log_softmax

logger = logging.getLogger(__name__)

SOFT_TARGET_TOLERANCE = 1e-6


class LossKind(str, Enum):
    HARD_CE = "hard-ce"
    SOFT_CE = "soft-ce"
    MSE = "mse"


class TrainConfig(BaseModel):
    """Optimizer recipe; Adam moment constants are the conventional defaults"""
    learning_rate: float = Field(1e-3, gt=0, description="Adam step size")
    batch_size: int = Field(64, ge=1, description="Mini-batch size")
    epochs: int = Field(300, ge=1, description="Full passes over the data")
    loss_kind: LossKind = Field(LossKind.HARD_CE, description="Training objective")
    seed: int = Field(0, description="Seed for per-epoch shuffling")
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class Batch:
    """Inputs plus one of: class indices, soft label rows, or real targets"""
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ShapeError(f"a batch needs at least one input row, got shape {self.inputs.shape}")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows but {self.targets.shape[0]} target rows"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, index: np.ndarray) -> "Batch":
        return Batch(self.inputs[index], self.targets[index])


def fit_batch_size(config: TrainConfig, n_samples: int) -> TrainConfig:
    """Clamp batch_size to the dataset size"""
    if config.batch_size <= n_samples:
        return config
    return config.model_copy(update={"batch_size": max(1, n_samples)})


def _check_targets(model: Model, batch: Batch, loss_kind: LossKind) -> np.ndarray:
    targets = batch.targets
    width = model.output_width
    if loss_kind == LossKind.HARD_CE:
        if targets.ndim != 1 or not np.issubdtype(targets.dtype, np.integer):
            raise ShapeError("hard-ce needs a vector of integer class indices")
        if targets.min() < 0 or targets.max() >= width:
            raise ShapeError(f"class indices must lie in [0, {width})")
        return targets
    targets = targets.astype(np.float64)
    if targets.ndim != 2 or targets.shape[1] != width:
        raise ShapeError(f"{loss_kind.value} needs targets of shape (n, {width}), got {targets.shape}")
    if loss_kind == LossKind.SOFT_CE:
        if np.any(targets < 0) or np.any(np.abs(targets.sum(axis=1) - 1.0) > SOFT_TARGET_TOLERANCE):
            raise ShapeError("soft-ce targets must be non-negative rows summing to 1")
    return targets


def loss_and_grads(model: Model, batch: Batch, loss_kind: LossKind) -> Tuple[float, List[np.ndarray]]:
    """Mean loss over the batch and gradients in Model.parameters() order"""
    loss_kind = LossKind(loss_kind)
    x = as_inputs(model, batch.inputs)
    targets = _check_targets(model, batch, loss_kind)
    fp = forward(model, x)
    n = x.shape[0]
    z = fp.logits

    if loss_kind == LossKind.MSE:
        diff = z - targets
        loss = float(np.mean(diff ** 2))
        delta = 2.0 * diff / diff.size
    else:
        logp = log_softmax(z)
        if loss_kind == LossKind.HARD_CE:
            loss = float(-np.mean(logp[np.arange(n), targets]))
            delta = fp.posteriors.copy()
            delta[np.arange(n), targets] -= 1.0
        else:
            loss = float(-np.mean(np.sum(targets * logp, axis=1)))
            delta = fp.posteriors - targets
        delta = delta / n

    if not np.isfinite(loss):
        raise NumericalError(f"non-finite {loss_kind.value} loss: {loss}")

    activations = [x] + fp.hidden_activations
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for layer in reversed(range(len(model.weights))):
        grads_w[layer] = activations[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (fp.pre_activations[layer - 1] > 0)

    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend([gw, gb])
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient")
    return loss, grads


def train(model: Model, dataset: Batch, config: TrainConfig) -> Tuple[Model, List[float]]:
    """Adam over shuffled mini-batches; returns a trained copy and per-epoch mean loss"""
    n = len(dataset)
    if config.batch_size > n:
        raise PreconditionError(f"batch_size {config.batch_size} exceeds dataset size {n}")
    trained = model.copy()
    params = trained.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    step = 0
    history = []

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            index = order[start:start + config.batch_size]
            try:
                loss, grads = loss_and_grads(trained, dataset.subset(index), config.loss_kind)
            except NumericalError as e:
                raise TrainingDivergedError(epoch, batch_no, float("nan")) from e
            step += 1
            bias1 = 1.0 - config.beta1 ** step
            bias2 = 1.0 - config.beta2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= config.beta1
                mi += (1.0 - config.beta1) * g
                vi *= config.beta2
                vi += (1.0 - config.beta2) * g * g
                p -= config.learning_rate * (mi / bias1) / (np.sqrt(vi / bias2) + config.epsilon)
            epoch_loss += loss * len(index)
        mean_loss = epoch_loss / n
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(epoch, -1, mean_loss)
        history.append(mean_loss)
        if (epoch + 1) % 100 == 0:
            logger.debug("epoch %d/%d loss=%.6f", epoch + 1, config.epochs, mean_loss)

    return trained, history


def evaluate(model: Model, dataset: Batch) -> float:
    """Fraction of rows whose argmax matches the class index"""
    labels = dataset.targets
    if labels.ndim != 1:
        raise ShapeError("evaluate needs integer class labels")
    predicted = np.argmax(forward(model, dataset.inputs).logits, axis=1)
    correct = int(np.sum(predicted == labels))
    return float(Fraction(correct, len(dataset)))
