from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..envs.base import Transition


@dataclass
class Batch:
    obs: list[np.ndarray]
    actions: list[np.ndarray]
    rewards: np.ndarray       # (B, N)
    next_obs: list[np.ndarray]
    terminal: np.ndarray      # (B,) float 0/1

    def __len__(self) -> int:
        return self.rewards.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring buffer of joint transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, obs_dims: Sequence[int], action_dims: Sequence[int],
                 rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.n_agents = len(obs_dims)
        self.obs = [np.zeros((capacity, d)) for d in obs_dims]
        self.next_obs = [np.zeros((capacity, d)) for d in obs_dims]
        self.actions = [np.zeros((capacity, d)) for d in action_dims]
        self.rewards = np.zeros((capacity, self.n_agents))
        self.terminal = np.zeros(capacity)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        c = self.cursor
        for i in range(self.n_agents):
            self.obs[i][c] = tr.observations[i]
            self.actions[i][c] = tr.actions[i]
            self.next_obs[i][c] = tr.next_observations[i]
        self.rewards[c] = tr.rewards
        self.terminal[c] = float(tr.terminal)
        self.cursor = (c + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            obs=[o[idx] for o in self.obs],
            actions=[a[idx] for a in self.actions],
            rewards=self.rewards[idx],
            next_obs=[o[idx] for o in self.next_obs],
            terminal=self.terminal[idx],
        )

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        return self.rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int) -> Batch:
        return self.gather(self.sample_indices(batch_size))

    def state_dict(self) -> dict:
        n = self.size
        state = {"size": n, "cursor": self.cursor, "rewards": self.rewards[:n].copy(),
                 "terminal": self.terminal[:n].copy(), "rng": self.rng.bit_generator.state}
        for i in range(self.n_agents):
            state[f"obs{i}"] = self.obs[i][:n].copy()
            state[f"actions{i}"] = self.actions[i][:n].copy()
            state[f"next_obs{i}"] = self.next_obs[i][:n].copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        n = int(state["size"])
        self.size, self.cursor = n, int(state["cursor"])
        self.rewards[:n] = state["rewards"]
        self.terminal[:n] = state["terminal"]
        for i in range(self.n_agents):
            self.obs[i][:n] = state[f"obs{i}"]
            self.actions[i][:n] = state[f"actions{i}"]
            self.next_obs[i][:n] = state[f"next_obs{i}"]
        self.rng.bit_generator.state = state["rng"]
