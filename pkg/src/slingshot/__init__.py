"""Learning dynamics with slingshot perturbation for monotone games.

Submodules:

- ``game``: zero-sum polymatrix games, payoffs and exploitability
- ``geometry``: regularizers, mirror maps and perturbation divergences
- ``learners``: FTRL and mirror descent with slingshot perturbation, plus baselines
- ``oracles``: reference solutions and rate envelopes
- ``harness``: seeded multi-instance experiments and CSV output
- ``cli``: the ``slingshot`` command
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    InvariantViolation,
    NumericError,
    SlingshotError,
    UnsupportedCombinationError,
)
from .game import GameSpec, build_biased_rps, build_game, build_random_payoff, exploitability
from .geometry import Divergence, Regularizer
from .learners import Constant, InverseLinear, LearnerConfig, NoiseModel, run
from .harness import ExperimentConfig, paper_presets, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DimensionError",
    "DomainError",
    "InvariantViolation",
    "NumericError",
    "SlingshotError",
    "UnsupportedCombinationError",
    "GameSpec",
    "build_biased_rps",
    "build_game",
    "build_random_payoff",
    "exploitability",
    "Divergence",
    "Regularizer",
    "Constant",
    "InverseLinear",
    "LearnerConfig",
    "NoiseModel",
    "run",
    "ExperimentConfig",
    "paper_presets",
    "run_experiment",
]
