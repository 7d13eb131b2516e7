"""Particle-world tasks on a square plane: cooperative navigation and predator-prey.

Kinematics are first order: an agent's action is its velocity, clamped to
``max_speed`` in magnitude, and ``position += velocity * dt`` followed by
clamping to ``[0, size]^2``.

Observation layout for agent ``i`` (dimension ``4 + 4 * (n_entities - 1)``):
own velocity (2), own position (2), then for every other entity in order
(other learning agents by index, then landmarks or the prey) its relative
position (2) followed by its relative velocity (2).  Landmarks have zero
velocity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .base import ActionSpace, EnvironmentSpec, StepResult, check_actions


@dataclass
class ParticleConfig:
    task: str = "navigation"  # "navigation" | "predator_prey"
    n_agents: int = 3
    n_landmarks: int = 3
    size: float = 10.0
    max_speed: float = 1.0
    prey_speed: float | None = None  # defaults to max_speed
    dt: float = 0.1
    collision_radius: float = 0.3
    collision_bonus: float = 10.0
    terminate_on_capture: bool = False
    horizon: int = 25
    gamma: float = 0.95

    def __post_init__(self):
        if self.task not in ("navigation", "predator_prey"):
            raise ValueError(f"unknown particle task {self.task!r}")
        if self.n_agents < 1 or (self.task == "navigation" and self.n_landmarks < 1):
            raise ValueError("entity counts must be positive")
        for name in ("size", "max_speed", "dt", "collision_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def n_others(self) -> int:
        return self.n_landmarks if self.task == "navigation" else 1


@dataclass
class WorldState:
    """Positions/velocities; ``agent_*`` rows are learners, ``other_*`` are landmarks or the prey."""

    agent_pos: np.ndarray
    agent_vel: np.ndarray
    other_pos: np.ndarray
    other_vel: np.ndarray
    size: float = 10.0

    def copy(self) -> "WorldState":
        return WorldState(self.agent_pos.copy(), self.agent_vel.copy(),
                          self.other_pos.copy(), self.other_vel.copy(), self.size)

    def shifted(self, offset: np.ndarray) -> "WorldState":
        return WorldState(self.agent_pos + offset, self.agent_vel.copy(),
                          self.other_pos + offset, self.other_vel.copy(), self.size)


def clamp_speed(v: np.ndarray, max_speed: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > max_speed, max_speed / np.maximum(norm, 1e-300), 1.0)
    return v * scale


def prey_velocity(state: WorldState, speed: float) -> np.ndarray:
    """Flee directly away from the nearest predator at ``speed``."""
    prey = state.other_pos[0]
    d = np.linalg.norm(state.agent_pos - prey, axis=1)
    away = prey - state.agent_pos[int(np.argmin(d))]
    norm = np.linalg.norm(away)
    if norm < 1e-12:
        return np.zeros(2)
    return away / norm * speed


def particle_step(state: WorldState, velocities: Sequence[np.ndarray], cfg: ParticleConfig) -> WorldState:
    """Advance one timestep; returns a new state."""
    v = clamp_speed(np.asarray(velocities, dtype=np.float64).reshape(-1, 2), cfg.max_speed)
    new = state.copy()
    new.agent_vel = v
    new.agent_pos = np.clip(state.agent_pos + v * cfg.dt, 0.0, state.size)
    if cfg.task == "predator_prey":
        speed = cfg.max_speed if cfg.prey_speed is None else cfg.prey_speed
        pv = prey_velocity(state, speed)
        new.other_vel = pv[None, :]
        new.other_pos = np.clip(state.other_pos + pv * cfg.dt, 0.0, state.size)
    return new


def coop_nav_reward(state: WorldState) -> float:
    """Negative sum over landmarks of the distance to the nearest agent."""
    d = np.linalg.norm(state.agent_pos[:, None, :] - state.other_pos[None, :, :], axis=-1)
    return -float(d.min(axis=0).sum())


def predator_reward(state: WorldState, collision_radius: float = 0.3, bonus: float = 10.0) -> float:
    """Negative distance of the nearest predator to the prey, plus ``bonus`` on capture."""
    d = capture_distance(state)
    return -d + (bonus if d < collision_radius else 0.0)


def capture_distance(state: WorldState) -> float:
    return float(np.linalg.norm(state.agent_pos - state.other_pos[0], axis=1).min())


def build_particle_observation(agent: int, state: WorldState) -> np.ndarray:
    own_p = state.agent_pos[agent]
    own_v = state.agent_vel[agent]
    parts = [own_v, own_p]
    for j in range(len(state.agent_pos)):
        if j != agent:
            parts += [state.agent_pos[j] - own_p, state.agent_vel[j] - own_v]
    for j in range(len(state.other_pos)):
        parts += [state.other_pos[j] - own_p, state.other_vel[j] - own_v]
    return np.concatenate(parts)


class ParticleEnv:
    def __init__(self, cfg: ParticleConfig | None = None, **overrides):
        self.cfg = cfg if cfg is not None else ParticleConfig(**overrides)
        n_entities = self.cfg.n_agents + self.cfg.n_others
        obs_dim = 4 + 4 * (n_entities - 1)
        space = ActionSpace.box(2, -self.cfg.max_speed, self.cfg.max_speed)
        self.spec = EnvironmentSpec(self.cfg.n_agents, (obs_dim,) * self.cfg.n_agents,
                                    (space,) * self.cfg.n_agents, self.cfg.gamma, self.cfg.horizon)
        self.state: WorldState | None = None
        self.t = 0

    def reset(self, seed: int) -> list[np.ndarray]:
        rng = np.random.default_rng(seed)
        c = self.cfg
        self.state = WorldState(
            agent_pos=rng.uniform(0.0, c.size, size=(c.n_agents, 2)),
            agent_vel=np.zeros((c.n_agents, 2)),
            other_pos=rng.uniform(0.0, c.size, size=(c.n_others, 2)),
            other_vel=np.zeros((c.n_others, 2)),
            size=c.size,
        )
        self.t = 0
        return self.observations()

    def observations(self) -> list[np.ndarray]:
        return [build_particle_observation(i, self.state) for i in range(self.cfg.n_agents)]

    def reward(self) -> float:
        if self.cfg.task == "navigation":
            return coop_nav_reward(self.state)
        return predator_reward(self.state, self.cfg.collision_radius, self.cfg.collision_bonus)

    def step(self, actions: Sequence[np.ndarray]) -> StepResult:
        actions = check_actions(self.spec, actions)
        self.state = particle_step(self.state, actions, self.cfg)
        self.t += 1
        r = self.reward()
        captured = self.cfg.task == "predator_prey" and capture_distance(self.state) < self.cfg.collision_radius
        terminal = self.t >= self.cfg.horizon or (self.cfg.terminate_on_capture and captured)
        return StepResult(self.observations(), np.full(self.cfg.n_agents, r), terminal,
                          {"captured": bool(captured)})
