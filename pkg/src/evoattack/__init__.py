"""Black-box adversarial attacks on image classifiers with evolution strategies."""

from .attack import DEFAULT_EPSILON, AttackConfig, AttackOutcome, run_attack
from .oracle import DEFAULT_BUDGET, FeedForwardModel, ModelOracle, QueryLedger, load_model
from .strategies import ALGORITHMS, make_optimizer
from .tensors import ImageTensor, PerturbationGenome

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "DEFAULT_BUDGET",
    "DEFAULT_EPSILON",
    "AttackConfig",
    "AttackOutcome",
    "FeedForwardModel",
    "ImageTensor",
    "ModelOracle",
    "PerturbationGenome",
    "QueryLedger",
    "load_model",
    "make_optimizer",
    "run_attack",
]
