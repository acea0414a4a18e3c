"""
Synthetic labeled datasets with planted sensitive attributes.

Task classes are Gaussian clusters whose means live in a subspace orthogonal
to the attribute directions, so an attribute only leaks into the inputs
through its own planted direction(s).
"""
import logging
from dataclasses import dataclass, field
from math import prod
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from core.errors import PreconditionError, ShapeError
from core.nn.artifact import load_bundle, save_bundle
from core.nn.train import Batch

logger = logging.getLogger(__name__)

KIND_DATASET = "dataset"
FRACTION_TOLERANCE = 1e-9


class AttributeSpec(BaseModel):
    """A sensitive attribute realized by a planted linear direction"""
    name: str
    n_classes: int = Field(2, ge=2, description="Number of attribute values")
    correlation: float = Field(0.0, ge=0.0, le=1.0, description="How often the planted direction follows the label")
    strength: float = Field(2.0, gt=0.0, description="Offset along the planted direction")


class DatasetSpec(BaseModel):
    name: str = "synthetic"
    n_samples: int = Field(..., ge=1)
    n_features: int = Field(..., ge=1)
    n_classes: int = Field(..., ge=2)
    attributes: List[AttributeSpec] = Field(default_factory=list)
    noise_scale: float = Field(1.0, gt=0.0)
    class_separation: float = Field(2.0, ge=0.0, description="Norm of each class mean")
    task_from_attributes: List[str] = Field(
        default_factory=list,
        description="When set, the task label is the composite of these attributes",
    )
    class_names: List[str] = Field(default_factory=list)
    common_tasks: str = ""
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names: {names}")
        if self.task_from_attributes:
            missing = [n for n in self.task_from_attributes if n not in names]
            if missing:
                raise ValueError(f"task_from_attributes names unknown attributes: {missing}")
            by_name = {a.name: a for a in self.attributes}
            composite = prod(by_name[n].n_classes for n in self.task_from_attributes)
            if composite != self.n_classes:
                raise ValueError(f"composite of {self.task_from_attributes} has {composite} classes, not {self.n_classes}")
        if self.class_names and len(self.class_names) != self.n_classes:
            raise ValueError("class_names must list one name per class")
        if planted_width(self.attributes) >= self.n_features:
            raise ValueError("not enough features to plant every attribute direction")
        return self


def planted_width(attributes: Sequence[AttributeSpec]) -> int:
    """Feature directions consumed by attributes (1 for binary, k otherwise)"""
    return sum(1 if a.n_classes == 2 else a.n_classes for a in attributes)


@dataclass
class Dataset:
    """Inputs, task labels, attribute labels, and where the rows came from"""
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    attributes: Dict[str, np.ndarray] = field(default_factory=dict)
    attribute_classes: Dict[str, int] = field(default_factory=dict)
    source_index: Optional[np.ndarray] = None
    lineage: List[str] = field(default_factory=list)
    spec: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.source_index is None:
            self.source_index = np.arange(len(self.labels), dtype=np.int64)
        n = self.inputs.shape[0]
        if self.labels.shape != (n,) or self.source_index.shape != (n,):
            raise ShapeError("inputs, labels and source_index disagree on the number of rows")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ShapeError(f"task labels must lie in [0, {self.n_classes})")
        for attr, values in self.attributes.items():
            k = self.attribute_classes[attr]
            if values.shape != (n,) or (n and (values.min() < 0 or values.max() >= k)):
                raise ShapeError(f"attribute {attr} labels must be {n} values in [0, {k})")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, index, split_name: str) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            name=self.name,
            inputs=self.inputs[index],
            labels=self.labels[index],
            n_classes=self.n_classes,
            attributes={k: v[index] for k, v in self.attributes.items()},
            attribute_classes=dict(self.attribute_classes),
            source_index=self.source_index[index],
            lineage=self.lineage + [split_name],
            spec=self.spec,
        )

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels)

    def attribute_batch(self, attr_name: str) -> Batch:
        if attr_name not in self.attributes:
            raise PreconditionError(f"dataset {self.name} has no attribute {attr_name!r}")
        return Batch(self.inputs, self.attributes[attr_name])


def generate_synthetic_dataset(spec: DatasetSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_samples, spec.n_features
    basis, _ = np.linalg.qr(rng.normal(size=(d, d)))
    reserved = planted_width(spec.attributes)

    attr_labels, planted = {}, {}
    for attr in spec.attributes:
        values = rng.permutation(np.arange(n) % attr.n_classes).astype(np.int64)
        follows = rng.random(n) < attr.correlation
        planted[attr.name] = np.where(follows, values, rng.integers(0, attr.n_classes, size=n))
        attr_labels[attr.name] = values

    if spec.task_from_attributes:
        labels, _ = _mixed_radix(
            [attr_labels[a] for a in spec.task_from_attributes],
            [next(s.n_classes for s in spec.attributes if s.name == a) for a in spec.task_from_attributes],
        )
    else:
        labels = rng.permutation(np.arange(n) % spec.n_classes).astype(np.int64)

    # class means in the span of the directions left after the attribute block
    free = basis[:, reserved:]
    coords = rng.normal(size=(spec.n_classes, free.shape[1]))
    coords /= np.linalg.norm(coords, axis=1, keepdims=True)
    means = spec.class_separation * coords @ free.T
    inputs = means[labels] + spec.noise_scale * rng.normal(size=(n, d))

    column = 0
    for attr in spec.attributes:
        values = planted[attr.name]
        if attr.n_classes == 2:
            sign = 2.0 * values - 1.0
            inputs += attr.strength * sign[:, None] * basis[:, column][None, :]
            column += 1
        else:
            inputs += attr.strength * basis[:, column + values].T
            column += attr.n_classes

    logger.debug("generated %s: n=%d d=%d classes=%d", spec.name, n, d, spec.n_classes)
    return Dataset(
        name=spec.name,
        inputs=inputs,
        labels=labels,
        n_classes=spec.n_classes,
        attributes=attr_labels,
        attribute_classes={a.name: a.n_classes for a in spec.attributes},
        lineage=[spec.name],
        spec=spec.model_dump(),
    )


def split_dataset(
    dataset: Dataset,
    fractions: Union[Sequence[float], Mapping[str, float]],
    seed: int,
) -> Dict[str, Dataset]:
    """Disjoint random partitions; sizes are floored and the last part takes the remainder"""
    if isinstance(fractions, Mapping):
        names, values = list(fractions.keys()), [float(v) for v in fractions.values()]
    else:
        values = [float(v) for v in fractions]
        names = [f"part{i}" for i in range(len(values))]
    if not values or any(v < 0 for v in values) or abs(sum(values) - 1.0) > FRACTION_TOLERANCE:
        raise PreconditionError(f"split fractions must be non-negative and sum to 1, got {values}")
    n = len(dataset)
    sizes = [int(np.floor(v * n)) for v in values[:-1]]
    sizes.append(n - sum(sizes))
    order = np.random.default_rng(seed).permutation(n)
    parts, start = {}, 0
    for name, size in zip(names, sizes):
        parts[name] = dataset.subset(order[start:start + size], f"split:{name}@{seed}")
        start += size
    return parts


def _mixed_radix(columns: Sequence[np.ndarray], radices: Sequence[int]) -> Tuple[np.ndarray, int]:
    code = np.zeros_like(np.asarray(columns[0]), dtype=np.int64)
    for values, k in zip(columns, radices):
        code = code * k + np.asarray(values, dtype=np.int64)
    return code, int(prod(radices))


def combine_attributes(dataset: Dataset, attr_names: Sequence[str]) -> Tuple[np.ndarray, int]:
    """
    Composite label over several attributes.

    Mixed-radix encoding with the first listed attribute most significant:
    code = ((a0 * k1) + a1) * k2 + a2 for three attributes.
    """
    if not attr_names:
        raise PreconditionError("combine_attributes needs at least one attribute name")
    missing = [a for a in attr_names if a not in dataset.attributes]
    if missing:
        raise PreconditionError(f"dataset {dataset.name} has no attribute(s) {missing}")
    return _mixed_radix(
        [dataset.attributes[a] for a in attr_names],
        [dataset.attribute_classes[a] for a in attr_names],
    )


def decode_composite(code: int, radices: Sequence[int]) -> Tuple[int, ...]:
    values = []
    for k in reversed(list(radices)):
        values.append(int(code % k))
        code //= k
    return tuple(reversed(values))


def save_dataset(dataset: Dataset, path) -> Path:
    arrays = {
        "inputs": dataset.inputs,
        "labels": dataset.labels,
        "source_index": dataset.source_index,
    }
    for attr, values in dataset.attributes.items():
        arrays[f"attr__{attr}"] = values
    header = {
        "kind": KIND_DATASET,
        "name": dataset.name,
        "n_classes": dataset.n_classes,
        "attribute_classes": dataset.attribute_classes,
        "lineage": dataset.lineage,
        "spec": dataset.spec,
    }
    return save_bundle(path, arrays, header)


def load_dataset(path) -> Dataset:
    arrays, header = load_bundle(path, expected_kind=KIND_DATASET)
    attributes = {
        name[len("attr__"):]: values for name, values in arrays.items() if name.startswith("attr__")
    }
    return Dataset(
        name=header["name"],
        inputs=arrays["inputs"],
        labels=arrays["labels"],
        n_classes=int(header["n_classes"]),
        attributes=attributes,
        attribute_classes={k: int(v) for k, v in header.get("attribute_classes", {}).items()},
        source_index=arrays.get("source_index"),
        lineage=list(header.get("lineage", [])),
        spec=header.get("spec", {}),
    )
