"""Centralized-critic learners (attention, K-head ablation, plain MLP) and single-agent DDPG."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..envs.base import ActionSpace, EnvironmentSpec
from ..numcore import Adam, ConfigurationError, MlpNetwork
from .buffer import Batch, ReplayBuffer
from .networks import ActorNet, build_critic

ALGORITHMS = ("att-maddpg", "maddpg", "khead-ablation", "ddpg-single")
LEARNER_CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    episodes: int = 1000
    steps_per_episode: int | None = None  # None: environment horizon
    gamma: float = 0.95
    buffer_capacity: int = 100_000
    batch_size: int = 64
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)
    encoder_hidden: tuple[int, ...] = (64,)
    head_dim: int = 32
    k: int = 4
    target_mode: str = "hard"  # "hard" | "soft"
    target_period: int = 100
    tau: float = 0.01
    sigma_init: float = 0.3
    sigma_decay: float = 0.999
    sigma_min: float = 0.0
    update_every: int = 1
    warmup: int | None = None  # transitions before the first update; None: batch_size
    teammates_from_policy: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma {self.gamma} outside [0, 1]")
        if self.target_mode not in ("hard", "soft"):
            raise ConfigurationError(f"target_mode must be 'hard' or 'soft', got {self.target_mode!r}")
        if self.target_mode == "soft" and not 0.0 < self.tau <= 1.0:
            raise ConfigurationError("tau must lie in (0, 1]")
        if self.target_mode == "hard" and self.target_period < 1:
            raise ConfigurationError("target_period must be >= 1")
        if self.episodes < 0 or self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigurationError("need episodes >= 0 and buffer_capacity >= batch_size >= 1")
        if self.k < 1 or self.update_every < 1 or self.head_dim < 1:
            raise ConfigurationError("k, update_every and head_dim must be >= 1")
        if self.sigma_init < 0 or self.sigma_min < 0:
            raise ConfigurationError("noise scales must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["encoder_hidden"] = list(self.encoder_hidden)
        return d

    def sigma(self, episode: int) -> float:
        return max(self.sigma_min, self.sigma_init * self.sigma_decay ** episode)

    @property
    def min_buffer(self) -> int:
        return self.batch_size if self.warmup is None else max(self.warmup, self.batch_size)


def td_target(reward, gamma: float, target_q, terminal=0.0):
    """``r + gamma * Q_target``, with no bootstrap on terminal transitions."""
    return reward + gamma * (1.0 - terminal) * target_q


def explore(mean_action: np.ndarray, sigma: float, space: ActionSpace, rng: np.random.Generator) -> np.ndarray:
    """Add N(0, sigma^2) noise and project back onto the action space."""
    if sigma == 0.0:
        return space.project(mean_action)
    return space.project(mean_action + sigma * rng.standard_normal(np.shape(mean_action)))


def _cat(parts: Sequence[np.ndarray], batch: int) -> np.ndarray:
    return np.concatenate(parts, axis=-1) if parts else np.zeros((batch, 0))


def _seed_streams(seed: int):
    init_ss, noise_ss, buffer_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init_ss), np.random.default_rng(noise_ss), np.random.default_rng(buffer_ss)


@dataclass
class AgentNets:
    actor: ActorNet
    critic: object
    target_actor: ActorNet
    target_critic: object
    actor_opt: Adam
    critic_opt: Adam


@dataclass
class UpdateStats:
    critic_loss: list[float] = field(default_factory=list)
    actor_objective: list[float] = field(default_factory=list)


class MultiAgentLearner:
    """Decentralized deterministic actors trained against per-agent centralized critics.

    ``algorithm`` selects the critic: ``att-maddpg`` (K-head attention),
    ``khead-ablation`` (heads merged without attention) or ``maddpg`` (plain
    MLP).  The learner owns its replay buffer and three RNG streams (network
    init, exploration noise, replay sampling) derived from ``seed``.
    """

    def __init__(self, spec: EnvironmentSpec, algorithm: str = "att-maddpg",
                 config: TrainConfig | None = None, seed: int = 0):
        if algorithm not in ALGORITHMS or algorithm == "ddpg-single":
            raise ConfigurationError(f"MultiAgentLearner does not run {algorithm!r}")
        self.spec = spec
        self.algorithm = algorithm
        self.config = config if config is not None else TrainConfig()
        cfg = self.config
        init_rng, self.noise_rng, buffer_rng = _seed_streams(seed)
        self.obs_width = sum(spec.obs_dims)
        self.agents: list[AgentNets] = []
        for i in range(spec.n_agents):
            actor = ActorNet(spec.obs_dims[i], spec.action_spaces[i], cfg.hidden, init_rng)
            critic = build_critic(algorithm, self.obs_width, spec.action_dims, i, cfg.k, cfg.hidden,
                                  cfg.encoder_hidden, cfg.head_dim, init_rng)
            t_actor = ActorNet(spec.obs_dims[i], spec.action_spaces[i], cfg.hidden)
            t_critic = build_critic(algorithm, self.obs_width, spec.action_dims, i, cfg.k, cfg.hidden,
                                    cfg.encoder_hidden, cfg.head_dim)
            t_actor.set_flat(actor.params)
            t_critic.set_flat(critic.params)
            self.agents.append(AgentNets(actor, critic, t_actor, t_critic,
                                         Adam(actor.n_params, cfg.lr_actor), Adam(critic.n_params, cfg.lr_critic)))
        self.buffer = ReplayBuffer(cfg.buffer_capacity, spec.obs_dims, spec.action_dims, buffer_rng)
        self.update_steps = 0
        self.env_steps = 0
        self.episodes_done = 0

    @property
    def n_agents(self) -> int:
        return self.spec.n_agents

    # -- acting -----------------------------------------------------------
    def policy(self, observations: Sequence[np.ndarray]) -> list[np.ndarray]:
        return [ag.actor.forward(np.asarray(o, dtype=np.float64)) for ag, o in zip(self.agents, observations)]

    def act(self, observations: Sequence[np.ndarray], sigma: float) -> list[np.ndarray]:
        return [explore(a, sigma, space, self.noise_rng)
                for a, space in zip(self.policy(observations), self.spec.action_spaces)]

    # -- joint-input helpers ---------------------------------------------
    @staticmethod
    def others(actions: Sequence[np.ndarray], i: int) -> np.ndarray:
        batch = actions[0].shape[0]
        return _cat([a for j, a in enumerate(actions) if j != i], batch)

    def critic_inputs(self, obs: Sequence[np.ndarray], actions: Sequence[np.ndarray], i: int):
        return np.concatenate(obs, axis=-1), actions[i], self.others(actions, i)

    def target_actions(self, batch: Batch) -> list[np.ndarray]:
        return [ag.target_actor.forward(o) for ag, o in zip(self.agents, batch.next_obs)]

    def critic_targets(self, i: int, batch: Batch, next_actions: Sequence[np.ndarray] | None = None) -> np.ndarray:
        if next_actions is None:
            next_actions = self.target_actions(batch)
        q_next = self.agents[i].target_critic.forward(*self.critic_inputs(batch.next_obs, next_actions, i))
        return td_target(batch.rewards[:, i:i + 1], self.config.gamma, q_next, batch.terminal[:, None])

    # -- updates -----------------------------------------------------------
    def critic_update(self, i: int, batch: Batch, targets: np.ndarray | None = None) -> float:
        """One Adam step on the mean squared TD error; returns the pre-step loss."""
        if targets is None:
            targets = self.critic_targets(i, batch)
        ag = self.agents[i]
        q, cache = ag.critic.forward_cached(*self.critic_inputs(batch.obs, batch.actions, i))
        residual = q - targets
        loss = float(np.mean(residual ** 2))
        if not np.isfinite(loss):
            raise FloatingPointError(f"agent {i}: non-finite critic loss after {self.update_steps} updates")
        grads = ag.critic.backward(cache, 2.0 * residual / residual.shape[0])
        ag.critic_opt.step(ag.critic.params, grads.params)
        return loss

    def actor_gradient(self, i: int, batch: Batch) -> tuple[float, np.ndarray]:
        """Mean Q_i with agent ``i``'s own action from its current policy, and the gradient of
        ``-mean Q_i`` with respect to the actor parameters."""
        ag = self.agents[i]
        own, a_cache = ag.actor.forward_cached(batch.obs[i])
        if self.config.teammates_from_policy:
            actions = [own if j == i else self.agents[j].actor.forward(batch.obs[j]) for j in range(self.n_agents)]
        else:
            actions = [own if j == i else batch.actions[j] for j in range(self.n_agents)]
        q, c_cache = ag.critic.forward_cached(*self.critic_inputs(batch.obs, actions, i))
        objective = float(np.mean(q))
        c_grads = ag.critic.backward(c_cache, np.full_like(q, -1.0 / q.shape[0]))
        return objective, ag.actor.backward(a_cache, c_grads.inputs[1]).params

    def actor_update(self, i: int, batch: Batch) -> float:
        """One Adam step ascending Q_i through the critic's action gradient; returns mean Q."""
        objective, grads = self.actor_gradient(i, batch)
        self.agents[i].actor_opt.step(self.agents[i].actor.params, grads)
        return objective

    def target_update(self) -> None:
        cfg = self.config
        if cfg.target_mode == "soft":
            for ag in self.agents:
                for online, target in ((ag.actor, ag.target_actor), (ag.critic, ag.target_critic)):
                    target.params *= 1.0 - cfg.tau
                    target.params += cfg.tau * online.params
        elif self.update_steps % cfg.target_period == 0:
            for ag in self.agents:
                ag.target_actor.set_flat(ag.actor.params)
                ag.target_critic.set_flat(ag.critic.params)

    def update(self, batch: Batch) -> UpdateStats:
        stats = UpdateStats()
        next_actions = self.target_actions(batch)
        for i in range(self.n_agents):
            stats.critic_loss.append(self.critic_update(i, batch, self.critic_targets(i, batch, next_actions)))
            stats.actor_objective.append(self.actor_update(i, batch))
        self.update_steps += 1
        self.target_update()
        return stats

    # -- checkpointing -----------------------------------------------------
    def state_dict(self) -> tuple[dict, dict[str, np.ndarray]]:
        meta = {
            "version": LEARNER_CHECKPOINT_VERSION,
            "algorithm": self.algorithm,
            "config": self.config.to_dict(),
            "update_steps": self.update_steps,
            "env_steps": self.env_steps,
            "episodes_done": self.episodes_done,
            "noise_rng": self.noise_rng.bit_generator.state,
            "adam": [],
        }
        arrays: dict[str, np.ndarray] = {}
        for i, ag in enumerate(self.agents):
            arrays[f"a{i}.actor"] = ag.actor.params.copy()
            arrays[f"a{i}.critic"] = ag.critic.params.copy()
            arrays[f"a{i}.target_actor"] = ag.target_actor.params.copy()
            arrays[f"a{i}.target_critic"] = ag.target_critic.params.copy()
            adam_meta = {}
            for name, opt in (("actor", ag.actor_opt), ("critic", ag.critic_opt)):
                st = opt.state_dict()
                arrays[f"a{i}.{name}_m"] = st["m"]
                arrays[f"a{i}.{name}_v"] = st["v"]
                adam_meta[name] = {"t": st["t"], "hyper": st["hyper"]}
            meta["adam"].append(adam_meta)
        buf = self.buffer.state_dict()
        meta["buffer"] = {"size": buf.pop("size"), "cursor": buf.pop("cursor"), "rng": buf.pop("rng")}
        for key, value in buf.items():
            arrays[f"buffer.{key}"] = value
        return meta, arrays

    def load_state_dict(self, meta: dict, arrays: dict[str, np.ndarray]) -> None:
        if meta.get("version") != LEARNER_CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported learner checkpoint version {meta.get('version')}")
        if meta["algorithm"] != self.algorithm:
            raise ConfigurationError(f"checkpoint holds {meta['algorithm']!r}, learner is {self.algorithm!r}")
        for i, ag in enumerate(self.agents):
            ag.actor.set_flat(arrays[f"a{i}.actor"])
            ag.critic.set_flat(arrays[f"a{i}.critic"])
            ag.target_actor.set_flat(arrays[f"a{i}.target_actor"])
            ag.target_critic.set_flat(arrays[f"a{i}.target_critic"])
            for name, opt in (("actor", ag.actor_opt), ("critic", ag.critic_opt)):
                am = meta["adam"][i][name]
                opt.load_state_dict({"t": am["t"], "hyper": am["hyper"],
                                     "m": arrays[f"a{i}.{name}_m"], "v": arrays[f"a{i}.{name}_v"]})
        self.update_steps = int(meta["update_steps"])
        self.env_steps = int(meta["env_steps"])
        self.episodes_done = int(meta["episodes_done"])
        self.noise_rng.bit_generator.state = meta["noise_rng"]
        buf = {key[len("buffer."):]: v for key, v in arrays.items() if key.startswith("buffer.")}
        buf.update(meta["buffer"])
        self.buffer.load_state_dict(buf)

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta, arrays = self.state_dict()
        meta["extra"] = extra or {}
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        arrays = {k: data[k] for k in data.files if k != "meta"}
    return meta, arrays


class DDPG:
    """Single-agent DDPG written directly from the critic loss / deterministic policy gradient.

    Exposes the same ``act``/``update``/``policy`` surface as
    :class:`MultiAgentLearner` so the training loop can drive either.
    """

    algorithm = "ddpg-single"

    def __init__(self, spec: EnvironmentSpec, config: TrainConfig | None = None, seed: int = 0):
        if spec.n_agents != 1:
            raise ConfigurationError("DDPG drives exactly one agent")
        self.spec = spec
        self.config = config if config is not None else TrainConfig()
        cfg = self.config
        init_rng, self.noise_rng, buffer_rng = _seed_streams(seed)
        obs_dim, space = spec.obs_dims[0], spec.action_spaces[0]
        self.obs_dim = obs_dim
        self.actor = ActorNet(obs_dim, space, cfg.hidden, init_rng)
        self.critic = MlpNetwork([obs_dim + space.dim, *cfg.hidden, 1],
                                 ["relu"] * len(cfg.hidden) + ["linear"], init_rng)
        self.target_actor = ActorNet(obs_dim, space, cfg.hidden)
        self.target_actor.set_flat(self.actor.params)
        self.target_critic = self.critic.clone()
        self.actor_opt = Adam(self.actor.n_params, cfg.lr_actor)
        self.critic_opt = Adam(self.critic.n_params, cfg.lr_critic)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, spec.obs_dims, spec.action_dims, buffer_rng)
        self.update_steps = 0
        self.env_steps = 0
        self.episodes_done = 0

    n_agents = 1

    def policy(self, observations):
        return [self.actor.forward(np.asarray(observations[0], dtype=np.float64))]

    def act(self, observations, sigma: float):
        return [explore(self.policy(observations)[0], sigma, self.spec.action_spaces[0], self.noise_rng)]

    def update(self, batch: Batch) -> UpdateStats:
        cfg = self.config
        s, a, s2 = batch.obs[0], batch.actions[0], batch.next_obs[0]
        r, done = batch.rewards[:, 0:1], batch.terminal[:, None]

        # critic: minimize (r + gamma Q'(s', mu'(s')) - Q(s, a))^2
        q_next = self.target_critic.forward(np.concatenate([s2, self.target_actor.forward(s2)], axis=-1))
        y = r + cfg.gamma * (1.0 - done) * q_next
        q, cache = self.critic.forward_cached(np.concatenate([s, a], axis=-1))
        residual = q - y
        loss = float(np.mean(residual ** 2))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite critic loss")
        g = self.critic.backward(cache, 2.0 * residual / residual.shape[0])
        self.critic_opt.step(self.critic.params, g.params)

        # actor: ascend Q(s, mu(s)) via grad_a Q * grad_theta mu
        mu, a_cache = self.actor.forward_cached(s)
        q_pi, c_cache = self.critic.forward_cached(np.concatenate([s, mu], axis=-1))
        dq_da = self.critic.backward(c_cache, np.full_like(q_pi, -1.0 / q_pi.shape[0])).inputs[0][:, self.obs_dim:]
        self.actor_opt.step(self.actor.params, self.actor.backward(a_cache, dq_da).params)

        self.update_steps += 1
        if cfg.target_mode == "soft":
            for online, target in ((self.actor, self.target_actor), (self.critic, self.target_critic)):
                target.params *= 1.0 - cfg.tau
                target.params += cfg.tau * online.params
        elif self.update_steps % cfg.target_period == 0:
            self.target_actor.set_flat(self.actor.params)
            self.target_critic.set_flat(self.critic.params)
        return UpdateStats([loss], [float(np.mean(q_pi))])
