"""Shared environment contract: specs, step results, transitions, returns."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


class ContractViolation(ValueError):
    """An action or observation does not match the environment spec."""


@dataclass(frozen=True)
class ActionSpace:
    """Per-agent action space.

    ``kind="simplex"`` means the action is a concatenation of probability
    vectors whose sizes are ``groups``; ``kind="box"`` means each component
    lies in ``[low, high]``.
    """

    kind: str
    dim: int
    groups: tuple[int, ...] = ()
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("simplex", "box"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("action dimension must be >= 1")
        if self.kind == "simplex":
            groups = self.groups or (self.dim,)
            if sum(groups) != self.dim or min(groups) < 1:
                raise ValueError(f"simplex groups {groups} do not partition dim {self.dim}")
            object.__setattr__(self, "groups", tuple(groups))
        elif not self.low < self.high:
            raise ValueError("box bounds need low < high")

    @classmethod
    def simplex(cls, *groups: int) -> "ActionSpace":
        return cls("simplex", sum(groups), tuple(groups))

    @classmethod
    def box(cls, dim: int, low: float, high: float) -> "ActionSpace":
        return cls("box", dim, (), float(low), float(high))

    def project(self, a: np.ndarray) -> np.ndarray:
        """Map an arbitrary vector (or batch) onto the action space."""
        a = np.asarray(a, dtype=np.float64)
        if self.kind == "box":
            return np.clip(a, self.low, self.high)
        out = np.empty_like(a)
        start = 0
        for g in self.groups:
            seg = np.maximum(a[..., start:start + g], 0.0)
            total = seg.sum(axis=-1, keepdims=True)
            safe = np.where(total > 0.0, total, 1.0)
            out[..., start:start + g] = np.where(total > 0.0, seg / safe, 1.0 / g)
            start += g
        return out

    def contains(self, a: np.ndarray, tol: float = 1e-9) -> bool:
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-1:] != (self.dim,) or not np.all(np.isfinite(a)):
            return False
        if self.kind == "box":
            return bool(np.all(a >= self.low - tol) and np.all(a <= self.high + tol))
        start = 0
        for g in self.groups:
            seg = a[..., start:start + g]
            if np.any(seg < -tol) or np.any(np.abs(seg.sum(axis=-1) - 1.0) > tol):
                return False
            start += g
        return True


@dataclass(frozen=True)
class EnvironmentSpec:
    n_agents: int
    obs_dims: tuple[int, ...]
    action_spaces: tuple[ActionSpace, ...]
    gamma: float
    horizon: int

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if len(self.obs_dims) != self.n_agents or len(self.action_spaces) != self.n_agents:
            raise ValueError("per-agent dimension lists must have n_agents entries")
        if min(self.obs_dims) < 1:
            raise ValueError("observation dimensions must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma {self.gamma} outside [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def action_dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.action_spaces)


@dataclass
class StepResult:
    observations: list[np.ndarray]
    rewards: np.ndarray
    terminal: bool
    info: dict = field(default_factory=dict)


@dataclass
class Transition:
    observations: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: np.ndarray
    next_observations: list[np.ndarray]
    terminal: bool


class Environment(Protocol):
    spec: EnvironmentSpec

    def reset(self, seed: int) -> list[np.ndarray]: ...

    def step(self, actions: Sequence[np.ndarray]) -> StepResult: ...


def check_actions(spec: EnvironmentSpec, actions: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(actions) != spec.n_agents:
        raise ContractViolation(f"expected {spec.n_agents} actions, got {len(actions)}")
    out = []
    for i, (a, space) in enumerate(zip(actions, spec.action_spaces)):
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (space.dim,):
            raise ContractViolation(f"agent {i}: action shape {a.shape} != ({space.dim},)")
        if not np.all(np.isfinite(a)):
            raise ContractViolation(f"agent {i}: non-finite action")
        out.append(a)
    return out


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """``sum_t gamma**t * r_t``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma {gamma} outside [0, 1]")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total
