"""The attack loop: evolve an L-inf bounded perturbation until the victim is fooled."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import BudgetExhausted, ConfigError
from .oracle import DEFAULT_BUDGET, QueryLedger
from .strategies import DEFAULTS, canonical_algorithm, make_optimizer
from .tensors import (
    ImageTensor,
    PerturbationGenome,
    apply_perturbation,
    argmax,
    clamp_linf,
    upsample_nearest,
)

PROB_FLOOR = 1e-12
DEFAULT_EPSILON = 0.05

UNTARGETED = "untargeted"
TARGETED = "targeted"


def fitness_untargeted(probs, true_class):
    """Cross-entropy of the true class, ``-log p_true``; larger is better for the attacker."""
    return -math.log(max(float(probs[true_class]), PROB_FLOOR))


def fitness_targeted(probs, target_class):
    """``log p_target``, i.e. the negated target-class loss."""
    return math.log(max(float(probs[target_class]), PROB_FLOOR))


@dataclass
class AttackConfig:
    true_class: int
    genome_shape: tuple
    scale: int = 1
    epsilon: float = DEFAULT_EPSILON
    budget: int = DEFAULT_BUDGET
    algorithm: str = "cma_es"
    seed: int = 0
    target_class: Optional[int] = None
    overrides: dict = field(default_factory=dict)

    @property
    def mode(self):
        return UNTARGETED if self.target_class is None else TARGETED

    def validate(self, image_shape=None, num_classes=None):
        """Raise :class:`ConfigError` on any violated invariant."""
        self.algorithm = canonical_algorithm(self.algorithm)
        if len(self.genome_shape) != 3 or min(self.genome_shape) < 1:
            raise ConfigError(f"genome shape must be three positive integers, got {self.genome_shape}")
        if isinstance(self.scale, bool) or int(self.scale) != self.scale or self.scale < 1:
            raise ConfigError(f"scale must be a positive integer, got {self.scale!r}")
        if not (isinstance(self.epsilon, (int, float)) and math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ConfigError(f"epsilon must be a positive real, got {self.epsilon!r}")
        if isinstance(self.budget, bool) or int(self.budget) != self.budget or self.budget < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.budget!r}")
        if self.true_class < 0:
            raise ConfigError(f"true class must be non-negative, got {self.true_class}")
        if self.target_class is not None:
            if self.target_class < 0:
                raise ConfigError(f"target class must be non-negative, got {self.target_class}")
            if self.target_class == self.true_class:
                raise ConfigError("target equals true label")
        generations = self.overrides.get("generations", 1)
        if isinstance(generations, bool) or int(generations) != generations or generations < 1:
            raise ConfigError(f"generation cap must be a positive integer, got {generations!r}")
        if image_shape is not None:
            h, w, c = self.genome_shape
            H, W, C = image_shape
            if h * self.scale != H or w * self.scale != W or c != C:
                raise ConfigError(
                    f"genome {h}x{w}x{c} upsampled by {self.scale} gives "
                    f"{h * self.scale}x{w * self.scale}x{c}, image is {H}x{W}x{C}"
                )
        if num_classes is not None:
            for name, cls in (("true class", self.true_class), ("target class", self.target_class)):
                if cls is not None and cls >= num_classes:
                    raise ConfigError(f"{name} {cls} out of range for {num_classes} classes")
        return self


@dataclass
class AttackOutcome:
    success: bool
    queries_used: int
    final_genome: PerturbationGenome
    best_fitness: float
    predicted_class_at_end: int
    adversarial_image: Optional[ImageTensor] = None
    generations: int = 0

    def to_record(self):
        """JSON-ready fields, tensors excluded."""
        return {
            "success": self.success,
            "queries_used": self.queries_used,
            "best_fitness": self.best_fitness,
            "predicted_class_at_end": self.predicted_class_at_end,
            "generations": self.generations,
        }


class Evaluation(NamedTuple):
    fitness: float
    success: bool
    probs: np.ndarray
    genome: PerturbationGenome
    image: ImageTensor


def success_predicate(probs, config):
    predicted = argmax(probs)
    if config.target_class is None:
        return predicted != config.true_class
    return predicted == config.target_class


def evaluate_genome(genome, image, config, oracle, ledger):
    """Clamp, upsample, apply and query once; :class:`BudgetExhausted` passes through."""
    clamped = clamp_linf(genome)
    perturbed = apply_perturbation(image, upsample_nearest(clamped, config.scale))
    probs = ledger.classify(oracle, perturbed)
    if config.target_class is None:
        fitness = fitness_untargeted(probs, config.true_class)
    else:
        fitness = fitness_targeted(probs, config.target_class)
    return Evaluation(fitness, success_predicate(probs, config), probs, clamped, perturbed)


def run_attack(image, config, oracle):
    """Run one black-box attack and report how it went.

    Stops on the first successful query (also mid-batch), when the query
    budget runs out, or when the generation cap is reached, whichever
    comes first. Configuration problems are raised before any query.
    """
    config.validate(image.shape, getattr(oracle, "num_classes", None))
    overrides = dict(config.overrides)
    cap = int(overrides.pop("generations", DEFAULTS[config.algorithm]["generations"]))
    shape = tuple(config.genome_shape)
    dimension = int(np.prod(shape))
    optimizer = make_optimizer(config.algorithm, dimension, config.seed, overrides)
    ledger = QueryLedger(config.budget)

    best = None
    last = None
    winner = None
    while winner is None and optimizer.generation < cap and not ledger.exhausted:
        candidates = optimizer.ask()
        fitnesses = []
        for candidate in candidates:
            genome = PerturbationGenome(candidate.reshape(shape), config.epsilon)
            try:
                last = evaluate_genome(genome, image, config, oracle, ledger)
            except BudgetExhausted:
                break
            fitnesses.append(last.fitness)
            if best is None or last.fitness > best.fitness:
                best = last
            if last.success:
                winner = last
                break
        if winner is not None or len(fitnesses) < len(candidates):
            break
        optimizer.tell(candidates, fitnesses)

    if last is None:
        raise ConfigError("attack finished without a single query")
    final = winner if winner is not None else best
    return AttackOutcome(
        success=winner is not None,
        queries_used=ledger.count,
        final_genome=final.genome,
        best_fitness=best.fitness,
        predicted_class_at_end=argmax(last.probs),
        adversarial_image=winner.image if winner is not None else None,
        generations=optimizer.generation,
    )
