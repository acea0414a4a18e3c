"""
Dense network kernel: parameters, forward pass, embeddings.

All arithmetic is float64. Weight matrices are stored as (fan_in, fan_out) so
a forward pass is ``x @ W + b`` for every layer; hidden layers use a
rectifier, the output layer is linear.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from core.errors import ShapeError

ACTIVATION_RELU = "relu"


@dataclass
class Model:
    """Dense network parameters plus the seed they were drawn from"""
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    seed: int
    activation: str = ACTIVATION_RELU

    @property
    def n_layers(self) -> int:
        """Number of entries in layer_sizes (input layer included)"""
        return len(self.layer_sizes)

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> List[np.ndarray]:
        """Parameters in the canonical order W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "Model":
        return Model(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
            activation=self.activation,
        )


@dataclass
class ForwardPass:
    """Everything a forward pass produces"""
    logits: np.ndarray
    posteriors: np.ndarray
    hidden_activations: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)


def _validate_layer_sizes(layer_sizes: Sequence[int]) -> List[int]:
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ShapeError(f"need at least 2 layers (input and output), got {sizes}")
    for size in sizes:
        if isinstance(size, bool) or int(size) != size or size < 1:
            raise ShapeError(f"layer sizes must be positive integers, got {sizes}")
    return [int(s) for s in sizes]


def init_model(layer_sizes: Sequence[int], seed: int) -> Model:
    """Scaled-uniform (Glorot) weights, zero biases, fully determined by seed"""
    sizes = _validate_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float64))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Model(layer_sizes=sizes, weights=weights, biases=biases, seed=int(seed))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def as_inputs(model: Model, inputs) -> np.ndarray:
    """Coerce inputs to a float64 matrix of the model's input width"""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"inputs must be a 2-D matrix, got shape {x.shape}")
    if x.shape[1] != model.input_width:
        raise ShapeError(f"input width {x.shape[1]} does not match model input width {model.input_width}")
    return x


def forward(model: Model, inputs) -> ForwardPass:
    x = as_inputs(model, inputs)
    hidden, pre = [], []
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        if i < last:
            a = relu(z)
            hidden.append(a)
        else:
            a = z
    return ForwardPass(logits=a, posteriors=softmax(a), hidden_activations=hidden, pre_activations=pre)


def predict_labels(model: Model, inputs) -> np.ndarray:
    return np.argmax(forward(model, inputs).logits, axis=1)


def embed(model: Model, inputs, layer_index: Optional[int] = None) -> np.ndarray:
    """Post-rectifier activations of a hidden layer (default: penultimate)"""
    if layer_index is None:
        layer_index = model.n_layers - 2
    if not 0 < layer_index < model.n_layers - 1:
        raise ShapeError(
            f"layer_index must address a hidden layer in (0, {model.n_layers - 1}), got {layer_index}"
        )
    return forward(model, inputs).hidden_activations[layer_index - 1]
