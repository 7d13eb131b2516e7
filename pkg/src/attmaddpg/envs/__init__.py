from .base import (
    ActionSpace,
    ContractViolation,
    Environment,
    EnvironmentSpec,
    StepResult,
    Transition,
    discounted_return,
)

__all__ = [
    "ActionSpace",
    "ContractViolation",
    "Environment",
    "EnvironmentSpec",
    "StepResult",
    "Transition",
    "discounted_return",
]
