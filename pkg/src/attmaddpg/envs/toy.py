"""One-dimensional target reaching: a single agent sees a target and emits a point.

Each step draws a fresh target ``t`` uniformly from ``[-reach, reach]``; the
observation is ``[t]``, the action is a scalar in ``[-1, 1]`` and the reward is
``1 - |a - t|``.  The optimal action is ``a = t`` with per-step reward 1, so the
optimal undiscounted episode return equals the horizon.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .base import ActionSpace, EnvironmentSpec, StepResult, check_actions


class TargetReachEnv:
    def __init__(self, horizon: int = 5, reach: float = 0.8, gamma: float = 0.0):
        if not 0.0 < reach <= 1.0:
            raise ValueError("reach must lie in (0, 1]")
        self.reach = reach
        self.spec = EnvironmentSpec(1, (1,), (ActionSpace.box(1, -1.0, 1.0),), gamma, horizon)
        self.rng = np.random.default_rng(0)
        self.target = 0.0
        self.t = 0

    def optimal_action(self) -> np.ndarray:
        return np.array([self.target])

    def _draw(self) -> list[np.ndarray]:
        self.target = float(self.rng.uniform(-self.reach, self.reach))
        return [np.array([self.target])]

    def reset(self, seed: int) -> list[np.ndarray]:
        self.rng = np.random.default_rng(seed)
        self.t = 0
        return self._draw()

    def step(self, actions: Sequence[np.ndarray]) -> StepResult:
        actions = check_actions(self.spec, actions)
        r = 1.0 - abs(float(actions[0][0]) - self.target)
        self.t += 1
        obs = self._draw()
        return StepResult(obs, np.array([r]), self.t >= self.spec.horizon, {})
