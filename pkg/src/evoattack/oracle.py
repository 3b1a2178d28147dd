"""The black-box boundary: classifier oracles, the in-process model and query accounting."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BudgetExhausted, ConfigError, ModelFormatError, OracleError
from .tensors import ImageTensor, softmax

DEFAULT_BUDGET = 10_000


class ClassifierOracle:
    """Anything that maps an image to a probability vector, and nothing more."""

    num_classes: int
    input_shape: tuple

    def classify(self, image):
        raise NotImplementedError

    def clone(self):
        """Return an oracle safe to use from another thread."""
        return self

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --- feed-forward model --------------------------------------------------


@dataclass(frozen=True)
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def describe(self):
        return f"dense {self.n_in}->{self.n_out}"


@dataclass(frozen=True)
class ReLU:
    def describe(self):
        return "relu"


@dataclass(frozen=True)
class Softmax:
    def describe(self):
        return "softmax"


class FeedForwardModel:
    """Immutable dense/relu/softmax stack over a flattened H x W x C input."""

    def __init__(self, input_shape, layers):
        self.input_shape = tuple(int(v) for v in input_shape)
        self.layers = tuple(layers)
        self._validate()
        for layer in self.layers:
            if isinstance(layer, Dense):
                layer.weights.setflags(write=False)
                layer.bias.setflags(write=False)

    def _validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ModelFormatError(f"input_shape must be three positive integers, got {list(self.input_shape)}")
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ModelFormatError("model must end with a softmax layer")
        width = int(np.prod(self.input_shape))
        previous = None
        for pos, layer in enumerate(self.layers, start=1):
            if isinstance(layer, Softmax) and pos != len(self.layers):
                raise ModelFormatError(f"layer {pos}: softmax is only allowed as the final layer")
            if not isinstance(layer, Dense):
                continue
            if layer.n_in != width:
                if previous is None:
                    raise ModelFormatError(
                        f"layer {pos} ({layer.describe()}) expects {layer.n_in} inputs "
                        f"but the input shape {list(self.input_shape)} flattens to {width}"
                    )
                prev_pos, prev = previous
                raise ModelFormatError(
                    f"layer {prev_pos} ({prev.describe()}) outputs {prev.n_out} values "
                    f"but layer {pos} ({layer.describe()}) expects {layer.n_in}"
                )
            width = layer.n_out
            previous = (pos, layer)
        self.num_classes = width

    def forward(self, image):
        data = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
        if tuple(data.shape) != self.input_shape:
            raise ConfigError(f"image shape {tuple(data.shape)} does not match model input {self.input_shape}")
        x = data.reshape(-1)
        for layer in self.layers:
            if isinstance(layer, Dense):
                x = layer.weights @ x + layer.bias
            elif isinstance(layer, ReLU):
                x = np.maximum(x, 0.0)
            else:
                x = softmax(x)
        return x

    def to_dict(self):
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append(
                    {
                        "type": "dense",
                        "in": layer.n_in,
                        "out": layer.n_out,
                        "weights": layer.weights.reshape(-1).tolist(),
                        "bias": layer.bias.tolist(),
                    }
                )
            else:
                layers.append({"type": layer.describe()})
        return {"input_shape": list(self.input_shape), "layers": layers}


_LAYER_KEYS = {
    "dense": {"type", "in", "out", "weights", "bias"},
    "relu": {"type"},
    "softmax": {"type"},
}


def _int_field(entry, key, where):
    value = entry.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ModelFormatError(f"{where}.{key}: expected a positive integer, got {value!r}")
    return value


def _real_array(values, count, where):
    if not isinstance(values, list):
        raise ModelFormatError(f"{where}: expected a list of {count} reals")
    if len(values) != count:
        raise ModelFormatError(f"{where}: expected {count} values, got {len(values)}")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ModelFormatError(f"{where}: all entries must be numbers")
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"{where}: non-finite value")
    return arr


def model_from_dict(doc):
    """Build a model from a parsed weight document, rejecting unknown fields."""
    if not isinstance(doc, dict):
        raise ModelFormatError("top level must be an object")
    extra = set(doc) - {"input_shape", "layers"}
    if extra:
        raise ModelFormatError(f"unknown top-level field(s): {', '.join(sorted(extra))}")
    for key in ("input_shape", "layers"):
        if key not in doc:
            raise ModelFormatError(f"missing top-level field: {key}")
    shape = doc["input_shape"]
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in shape)
    ):
        raise ModelFormatError(f"input_shape: expected [H, W, C] positive integers, got {shape!r}")
    if not isinstance(doc["layers"], list):
        raise ModelFormatError("layers: expected a list")

    layers = []
    for idx, entry in enumerate(doc["layers"]):
        where = f"layers[{idx}]"
        if not isinstance(entry, dict):
            raise ModelFormatError(f"{where}: expected an object")
        kind = entry.get("type")
        if kind not in _LAYER_KEYS:
            raise ModelFormatError(f"{where}.type: unknown layer type {kind!r}")
        extra = set(entry) - _LAYER_KEYS[kind]
        if extra:
            raise ModelFormatError(f"{where}: unknown field(s) for {kind}: {', '.join(sorted(extra))}")
        if kind == "dense":
            missing = _LAYER_KEYS["dense"] - set(entry)
            if missing:
                raise ModelFormatError(f"{where}: missing field(s): {', '.join(sorted(missing))}")
            n_in = _int_field(entry, "in", where)
            n_out = _int_field(entry, "out", where)
            weights = _real_array(entry["weights"], n_in * n_out, f"{where}.weights")
            bias = _real_array(entry["bias"], n_out, f"{where}.bias")
            layers.append(Dense(weights.reshape(n_out, n_in), bias))
        elif kind == "relu":
            layers.append(ReLU())
        else:
            layers.append(Softmax())
    return FeedForwardModel(shape, layers)


def parse_model(text, source="<string>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return model_from_dict(doc)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{source}: {exc}") from None


def load_model(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read weight file {path}: {exc}") from exc
    return parse_model(text, str(path))


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")


class ModelOracle(ClassifierOracle):
    """In-process oracle over a :class:`FeedForwardModel`; thread-safe."""

    def __init__(self, model):
        self.model = model
        self.num_classes = model.num_classes
        self.input_shape = model.input_shape

    def classify(self, image):
        return self.model.forward(image)


# --- query accounting ----------------------------------------------------


class QueryLedger:
    """Counts oracle queries against a hard budget."""

    def __init__(self, budget=DEFAULT_BUDGET):
        if isinstance(budget, bool) or int(budget) != budget or budget < 1:
            raise ConfigError(f"query budget must be a positive integer, got {budget!r}")
        self.budget = int(budget)
        self.count = 0
        self._lock = threading.Lock()

    @property
    def exhausted(self):
        return self.count >= self.budget

    @property
    def remaining(self):
        return self.budget - self.count

    def classify(self, oracle, image):
        """Query ``oracle`` once, or raise :class:`BudgetExhausted` without querying."""
        with self._lock:
            if self.count >= self.budget:
                raise BudgetExhausted(self.budget)
            self.count += 1
            spent = self.count
        try:
            return oracle.classify(image)
        except OracleError as exc:
            exc.query_count = spent
            raise


def classify_counted(oracle, ledger, image):
    return ledger.classify(oracle, image)
