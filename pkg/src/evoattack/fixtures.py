"""Seeded victim models and correct-by-construction datasets for desk-scale runs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import write_labels
from .errors import ConfigError, FixtureError
from .oracle import Dense, FeedForwardModel, ReLU, Softmax, save_model
from .ppm import quantize, write_ppm
from .tensors import ImageTensor, argmax

MAX_DRAWS = 100_000


@dataclass(frozen=True)
class FixtureSpec:
    hw: int = 16
    channels: int = 3
    classes: int = 4
    hidden: tuple = (32,)
    images: int = 20
    contrast: float = 0.25

    def validate(self):
        if self.classes < 2:
            raise ConfigError("a fixture needs at least 2 classes")
        if self.hw < 1 or self.images < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("fixture sizes must be positive")
        if not 0 < self.contrast <= 0.5:
            raise ConfigError("contrast must lie in (0, 0.5]")
        if self.channels != 3:
            raise ConfigError("PPM fixtures are RGB; channels must be 3")
        return self


def random_model(rng, spec):
    """Dense/ReLU stack with weights ~ N(0, 1/sqrt(fan_in)).

    The first bias centres the input on mid-grey so that every class owns a
    share of the space around the 0.5 image; later biases are zero.
    """
    widths = [spec.hw * spec.hw * spec.channels, *spec.hidden, spec.classes]
    layers = []
    for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        weights = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))
        bias = -0.5 * weights.sum(axis=1) if k == 0 else np.zeros(n_out)
        layers.append(Dense(weights, bias))
        if k < len(widths) - 2:
            layers.append(ReLU())
    layers.append(Softmax())
    return FeedForwardModel((spec.hw, spec.hw, spec.channels), layers)


def sample_image(rng, model, label, shape, contrast=0.25):
    """Rejection-sample a noise image the model assigns to ``label``.

    Pixels are uniform in ``[0.5 - contrast, 0.5 + contrast]``; a lower
    contrast puts images closer to the decision boundaries.

    The image is quantized to bytes before the check so that the PPM written
    to disk is exactly what was accepted.
    """
    for _ in range(MAX_DRAWS):
        pixels = quantize(0.5 + contrast * (2.0 * rng.random(shape) - 1.0)) / 255.0
        image = ImageTensor(pixels)
        if argmax(model.forward(image)) == label:
            return image
    raise FixtureError(f"no image classified as {label} within {MAX_DRAWS} draws; try another seed")


def generate_fixtures(seed, out_dir, spec=FixtureSpec()):
    """Write ``model.json`` and ``dataset/`` under ``out_dir``; returns both paths.

    Labels cycle through the classes; each image also gets a random target
    class different from its label.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    model = random_model(rng, spec)

    out_dir = Path(out_dir)
    data_dir = out_dir / "dataset"
    data_dir.mkdir(parents=True, exist_ok=True)
    shape = (spec.hw, spec.hw, spec.channels)
    rows = []
    for idx in range(spec.images):
        label = idx % spec.classes
        image = sample_image(rng, model, label, shape, spec.contrast)
        target = int(rng.integers(spec.classes - 1))
        target += target >= label
        filename = f"img{idx:03d}.ppm"
        write_ppm(data_dir / filename, image)
        rows.append((filename, label, target))
    write_labels(data_dir, rows)

    model_path = out_dir / "model.json"
    save_model(model, model_path)
    return model_path, data_dir
