"""
Self-describing array container shared by model artifacts and dataset payloads.

A container is a NumPy ``.npz`` archive holding named little-endian float64 or
int64 arrays plus a ``__header__`` entry: UTF-8 JSON bytes with a
``format_version`` and a ``kind``. Nothing is pickled.
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.errors import ArtifactError
from core.nn.model import Model

FORMAT_VERSION = 1
HEADER_KEY = "__header__"
KIND_MODEL = "model"


def _fixed_order(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if np.issubdtype(array.dtype, np.integer):
        return array.astype("<i8")
    return array.astype("<f8")


def save_bundle(path, arrays: Dict[str, np.ndarray], header: Dict[str, Any]) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    if HEADER_KEY in arrays:
        raise ArtifactError(f"array name {HEADER_KEY} is reserved")
    header = {"format_version": FORMAT_VERSION, **header}
    payload = {name: _fixed_order(value) for name, value in arrays.items()}
    payload[HEADER_KEY] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **payload)
    return path


def load_bundle(path, expected_kind: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except Exception as e:
        raise ArtifactError(f"artifact is corrupt: {path} ({e})") from e
    raw_header = arrays.pop(HEADER_KEY, None)
    if raw_header is None:
        raise ArtifactError(f"artifact has no header: {path}")
    try:
        header = json.loads(raw_header.tobytes().decode("utf-8"))
    except ValueError as e:
        raise ArtifactError(f"artifact header is not JSON: {path}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(f"unsupported artifact format_version {header.get('format_version')!r}")
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise ArtifactError(f"expected a {expected_kind} artifact, found {header.get('kind')!r}")
    return arrays, header


def save_model(model: Model, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write a model artifact; metadata carries training lineage"""
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    header = {
        "kind": KIND_MODEL,
        "layer_sizes": list(model.layer_sizes),
        "seed": model.seed,
        "activation": model.activation,
        "metadata": metadata or {},
    }
    return save_bundle(path, arrays, header)


def load_model(path) -> Tuple[Model, Dict[str, Any]]:
    arrays, header = load_bundle(path, expected_kind=KIND_MODEL)
    sizes = header.get("layer_sizes") or []
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w, b = arrays.get(f"W{i}"), arrays.get(f"b{i}")
        if w is None or b is None or w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ArtifactError(f"layer {i} parameters do not match layer_sizes {sizes}")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if len(sizes) < 2 or not all(np.all(np.isfinite(p)) for p in weights + biases):
        raise ArtifactError("artifact parameters are missing or non-finite")
    model = Model(
        layer_sizes=[int(s) for s in sizes],
        weights=weights,
        biases=biases,
        seed=int(header.get("seed", 0)),
        activation=header.get("activation", "relu"),
    )
    return model, header.get("metadata", {})
