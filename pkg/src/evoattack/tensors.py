"""Image and perturbation value types and the tensor ops of the attack pipeline.

Arrays are float64, shaped ``(height, width, channels)``; flattening is
numpy's C order, i.e. ``index = row * width * channels + col * channels + chan``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError

PROB_SUM_TOL = 1e-6


def _as_hwc(data, name):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ConfigError(f"{name} must be a non-empty (height, width, channels) array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """An RGB (or any channel count) image with pixels in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_hwc(self.data, "image")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ConfigError("image pixels must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, values, shape):
        return cls(np.asarray(values, dtype=np.float64).reshape(shape))

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def flat(self):
        return self.data.reshape(-1)

    def __eq__(self, other):
        return isinstance(other, ImageTensor) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class PerturbationGenome:
    """The evolved perturbation ``delta`` together with its L-inf bound."""

    data: np.ndarray
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "data", _as_hwc(self.data, "genome"))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def from_flat(cls, values, shape, epsilon):
        return cls(np.asarray(values, dtype=np.float64).reshape(shape), epsilon)

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def flat(self):
        return self.data.reshape(-1)

    def __eq__(self, other):
        return (
            isinstance(other, PerturbationGenome)
            and self.epsilon == other.epsilon
            and np.array_equal(self.data, other.data)
        )


def upsample_nearest(genome, scale):
    """Nearest-neighbour upsampling by an integer factor.

    Every input pixel ``(j, i)`` is replicated over the ``scale x scale``
    block whose top-left corner is ``(j * scale, i * scale)``.
    """
    scale = int(scale)
    if scale < 1:
        raise ConfigError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return genome
    data = np.repeat(np.repeat(genome.data, scale, axis=0), scale, axis=1)
    return PerturbationGenome(data, genome.epsilon)


def clamp_linf(genome):
    eps = genome.epsilon
    return PerturbationGenome(np.clip(genome.data, -eps, eps), eps)


def apply_perturbation(image, upsampled):
    """Return ``clip(image + delta, 0, 1)``; the input image is left untouched."""
    if image.shape != upsampled.shape:
        raise ConfigError(
            f"perturbation shape {upsampled.shape} does not match image shape {image.shape}"
        )
    return ImageTensor(np.clip(image.data + upsampled.data, 0.0, 1.0))


def argmax(probs):
    """Index of the largest entry; ties go to the smallest index."""
    probs = np.asarray(probs)
    if probs.size == 0:
        raise ContractError("argmax of an empty vector")
    # np.argmax already returns the first occurrence of the maximum
    return int(np.argmax(probs))


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ContractError("softmax expects a non-empty 1-D vector")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax input contains NaN or infinite values")
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def check_probabilities(probs, num_classes=None, tol=PROB_SUM_TOL):
    """Validate a probability vector, returning it as a float64 array.

    Raises ``ValueError`` with a short reason on any violation.
    """
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("probabilities must be a non-empty vector")
    if num_classes is not None and arr.size != num_classes:
        raise ValueError(f"expected {num_classes} probabilities, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("probabilities contain non-finite values")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("probabilities outside [0, 1]")
    if abs(arr.sum() - 1.0) > tol:
        raise ValueError(f"probabilities not normalized (sum={arr.sum():.9g})")
    return arr
