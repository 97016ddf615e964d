"""Age-of-information penalty scheduling with hybrid local/edge computation."""

from __future__ import annotations

from .delays import (
    DelayDistribution,
    Deterministic,
    GeometricOn,
    PoissonShifted,
    UniformInt,
    delay_from_config,
)
from .engine import (
    Action,
    DeviceConfig,
    InfeasibleAction,
    RunTrace,
    Stage,
    SystemConfig,
    SystemModel,
    run,
)
from .penalty import (
    CompositePenalty,
    ExtendedPenalty,
    LinearPenalty,
    PowerPenalty,
    SquarePenalty,
    TailTruncationWarning,
    TooLargeError,
    penalty_from_config,
)
from .policies import (
    MaxReductionPolicy,
    MaxWeightPolicy,
    NullPolicy,
    RandomizedPolicy,
    feasible_randomized_probs,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "CompositePenalty",
    "DelayDistribution",
    "Deterministic",
    "DeviceConfig",
    "ExtendedPenalty",
    "GeometricOn",
    "InfeasibleAction",
    "LinearPenalty",
    "MaxReductionPolicy",
    "MaxWeightPolicy",
    "NullPolicy",
    "PoissonShifted",
    "PowerPenalty",
    "RandomizedPolicy",
    "RunTrace",
    "SquarePenalty",
    "Stage",
    "SystemConfig",
    "SystemModel",
    "TailTruncationWarning",
    "TooLargeError",
    "UniformInt",
    "delay_from_config",
    "feasible_randomized_probs",
    "penalty_from_config",
    "run",
    "__version__",
]
