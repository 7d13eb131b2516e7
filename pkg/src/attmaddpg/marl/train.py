"""Episode loop: explore, store, update, and emit one metrics row per episode."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from ..envs.base import Environment, Transition
from .agents import DDPG, MultiAgentLearner, TrainConfig

Learner = MultiAgentLearner | DDPG
Policy = Callable[[Sequence[np.ndarray]], list[np.ndarray]]


def episode_seed(seed: int, episode: int) -> int:
    """Environment reset seed for an episode; independent of the learner, so seeds pair across algorithms."""
    return int(np.random.SeedSequence((seed, episode)).generate_state(1)[0])


def _scalar_info(info: dict) -> dict[str, float]:
    return {k: float(v) for k, v in info.items() if isinstance(v, (bool, int, float, np.floating))}


def _mean_or_none(values: list[list[float]]) -> list[float] | None:
    if not values:
        return None
    return [float(x) for x in np.mean(np.asarray(values), axis=0)]


def run_episode(env: Environment, policy: Policy, seed: int, steps: int | None = None) -> dict:
    """Roll out ``policy`` for one episode without learning; returns reward and info summaries."""
    horizon = steps or env.spec.horizon
    obs = env.reset(seed)
    rewards, infos = [], []
    for _ in range(horizon):
        res = env.step(policy(obs))
        rewards.append(res.rewards)
        infos.append(_scalar_info(res.info))
        obs = res.observations
        if res.terminal:
            break
    per_agent = np.mean(rewards, axis=0)
    info_mean = {k: float(np.mean([d[k] for d in infos])) for k in infos[0]} if infos else {}
    return {"reward": [float(x) for x in per_agent], "mean_reward": float(per_agent.mean()),
            "steps": len(rewards), "info": info_mean}


def evaluate(env: Environment, policy: Policy, seed: int, episodes: int = 10, first_episode: int = 0) -> dict:
    """Average of :func:`run_episode` over ``episodes`` reset seeds derived from ``seed``."""
    rows = [run_episode(env, policy, episode_seed(seed, first_episode + e)) for e in range(episodes)]
    info_keys = rows[0]["info"].keys() if rows else ()
    return {
        "episodes": episodes,
        "mean_reward": float(np.mean([r["mean_reward"] for r in rows])) if rows else float("nan"),
        "reward": [float(x) for x in np.mean([r["reward"] for r in rows], axis=0)] if rows else [],
        "info": {k: float(np.mean([r["info"][k] for r in rows])) for k in info_keys},
    }


def train_iter(env: Environment, learner: Learner, seed: int,
               config: TrainConfig | None = None) -> Iterator[dict]:
    """Train from ``learner.episodes_done`` up to ``config.episodes``, yielding a row per episode.

    A row holds the per-agent mean per-step reward, their mean, per-agent
    critic losses and actor objectives averaged over the episode's update
    rounds (``None`` before the buffer reaches ``min_buffer``), the noise
    scale, and the mean of scalar ``info`` fields reported by the environment.
    """
    cfg = config if config is not None else learner.config
    horizon = cfg.steps_per_episode or env.spec.horizon
    for episode in range(learner.episodes_done, cfg.episodes):
        sigma = cfg.sigma(episode)
        obs = env.reset(episode_seed(seed, episode))
        rewards, infos, closs, aobj = [], [], [], []
        for _ in range(horizon):
            actions = learner.act(obs, sigma)
            res = env.step(actions)
            learner.buffer.push(Transition(obs, actions, res.rewards, res.observations, res.terminal))
            learner.env_steps += 1
            rewards.append(res.rewards)
            infos.append(_scalar_info(res.info))
            obs = res.observations
            if len(learner.buffer) >= cfg.min_buffer and learner.env_steps % cfg.update_every == 0:
                stats = learner.update(learner.buffer.sample(cfg.batch_size))
                closs.append(stats.critic_loss)
                aobj.append(stats.actor_objective)
            if res.terminal:
                break
        learner.episodes_done = episode + 1
        per_agent = np.mean(rewards, axis=0)
        yield {
            "episode": episode,
            "reward": [float(x) for x in per_agent],
            "mean_reward": float(per_agent.mean()),
            "critic_loss": _mean_or_none(closs),
            "actor_objective": _mean_or_none(aobj),
            "sigma": float(sigma),
            "steps": len(rewards),
            "updates": len(closs),
            "info": {k: float(np.mean([d[k] for d in infos])) for k in infos[0]} if infos else {},
        }


def train(env: Environment, learner: Learner, seed: int, config: TrainConfig | None = None) -> list[dict]:
    return list(train_iter(env, learner, seed, config))
