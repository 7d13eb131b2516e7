"""Declarative experiments: config validation, seeded runs, summaries, curve export, attention dumps.

Experiment config schema (JSON)::

    {
      "name": str,                        # run directory name under the output root
      "env": {"kind": "routing", "topology": "simple" | path,
              "trace": "static" | "synthetic" | path.csv,
              "trace_steps": 1000, "trace_seed": 0, "scale": null | fraction,
              "horizon": 10, "gamma": 0.95, "exploration_bonus": 0.0}
           | {"kind": "particle", <ParticleConfig fields>}
           | {"kind": "toy", "horizon": 5, "reach": 0.8, "gamma": 0.0},
      "algorithm": "att-maddpg" | "maddpg" | "khead-ablation" | "wcmp" | "ddpg-single",
      "k": 4,                             # attention / ablation head count (overrides train.k)
      "train": {<TrainConfig fields>},
      "seeds": [0, 1, 2],
      "eval_episodes": 10,
      "output_dir": optional path        # default: $ATTMADDPG_OUTPUT (or "runs") / name
    }

Run layout: ``<output_dir>/<algorithm>/seed-<s>/`` holds ``metrics.jsonl``
(one row per episode, deterministic), ``timing.jsonl`` (wall-clock per
episode, kept apart so metrics stay byte-identical), ``eval.json`` and
``checkpoint.npz``.  ``<output_dir>/<algorithm>/summary.json`` aggregates the
seeds; ``config.json`` records the resolved config.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .envs.base import Transition
from .envs.particle import ParticleConfig, ParticleEnv
from .envs.routing import (
    RoutingEnv, load_topology, load_trace, scale_trace, static_trace, synthetic_trace, wcmp_policy,
)
from .envs.toy import TargetReachEnv
from .marl.agents import DDPG, MultiAgentLearner, TrainConfig, read_checkpoint
from .marl.train import episode_seed, evaluate, train_iter
from .numcore import ConfigurationError

ALGORITHMS = ("att-maddpg", "maddpg", "khead-ablation", "wcmp", "ddpg-single")
ENV_KINDS = ("routing", "particle", "toy")
OUTPUT_ENV_VAR = "ATTMADDPG_OUTPUT"
BUILTIN_CONFIGS = ("simple-static", "simple-synthetic", "complex-synthetic", "navigation", "predator-prey",
                   "toy-ddpg")
FINAL_WINDOW_FRACTION = 0.1

_ROUTING_KEYS = {"kind", "topology", "trace", "trace_steps", "trace_seed", "scale", "horizon", "gamma",
                 "exploration_bonus"}
_TOY_KEYS = {"kind", "horizon", "reach", "gamma"}


class ExperimentError(ConfigurationError):
    """Invalid experiment description; the message names the offending field."""


# ----------------------------------------------------------------------
# Config
# ----------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    name: str
    env: dict
    algorithm: str
    train: TrainConfig
    seeds: list[int]
    eval_episodes: int = 10
    output_dir: str | None = None

    @property
    def k(self) -> int:
        return self.train.k

    def env_label(self) -> str:
        kind = self.env["kind"]
        if kind == "routing":
            return f"routing:{self.env.get('topology', 'simple')}:{self.env.get('trace', 'static')}"
        if kind == "particle":
            return f"particle:{self.env.get('task', 'navigation')}"
        return "toy"

    def resolved_output(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ENV_VAR, "runs")) / self.name

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        return {"name": self.name, "env": copy.deepcopy(self.env), "algorithm": self.algorithm,
                "k": train.pop("k"), "train": train, "seeds": list(self.seeds),
                "eval_episodes": self.eval_episodes, "output_dir": self.output_dir}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ExperimentError(msg)


def config_from_dict(data: dict) -> ExperimentConfig:
    _require(isinstance(data, dict), "config must be a JSON object")
    known = {"name", "env", "algorithm", "k", "train", "seeds", "eval_episodes", "output_dir"}
    extra = set(data) - known
    _require(not extra, f"unknown top-level fields: {sorted(extra)}")
    for key in ("name", "env", "algorithm"):
        _require(key in data, f"missing required field {key!r}")
    env = dict(data["env"])
    kind = env.get("kind")
    _require(kind in ENV_KINDS, f"env.kind must be one of {ENV_KINDS}, got {kind!r}")
    if kind == "routing":
        extra = set(env) - _ROUTING_KEYS
        _require(not extra, f"unknown env fields for routing: {sorted(extra)}")
    elif kind == "particle":
        allowed = {f.name for f in fields(ParticleConfig)} | {"kind"}
        extra = set(env) - allowed
        _require(not extra, f"unknown env fields for particle: {sorted(extra)}")
    else:
        extra = set(env) - _TOY_KEYS
        _require(not extra, f"unknown env fields for toy: {sorted(extra)}")
    algo = data["algorithm"]
    _require(algo in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}, got {algo!r}")
    _require(algo != "wcmp" or kind == "routing", "algorithm 'wcmp' only applies to the routing environment")
    train_dict = dict(data.get("train", {}))
    if "k" in data:
        train_dict["k"] = data["k"]
    try:
        train = TrainConfig.from_dict(train_dict)
    except (TypeError, ConfigurationError) as exc:
        raise ExperimentError(f"train: {exc}") from exc
    seeds = data.get("seeds", [0])
    _require(isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds),
             "seeds must be a non-empty list of non-negative integers")
    _require(len(set(seeds)) == len(seeds), f"seeds must be unique, got {seeds}")
    eval_episodes = data.get("eval_episodes", 10)
    _require(isinstance(eval_episodes, int) and eval_episodes >= 1, "eval_episodes must be a positive integer")
    cfg = ExperimentConfig(str(data["name"]), env, algo, train, list(seeds), eval_episodes, data.get("output_dir"))
    try:
        spec = build_env(cfg.env).spec
    except (ValueError, OSError) as exc:
        raise ExperimentError(f"env: {exc}") from exc
    _require(algo != "ddpg-single" or spec.n_agents == 1,
             f"algorithm 'ddpg-single' needs a single-agent environment, this one has {spec.n_agents} agents")
    return cfg


def builtin_config_path(name: str):
    return resources.files("attmaddpg.configs").joinpath(f"{name}.json")


def load_config(source: str | Path, *, seed: int | None = None, k: int | None = None,
                algorithm: str | None = None, output_dir: str | None = None,
                episodes: int | None = None) -> ExperimentConfig:
    """Read a config by built-in name or path and apply command-line overrides."""
    if str(source) in BUILTIN_CONFIGS:
        text, origin = builtin_config_path(str(source)).read_text(), f"built-in {source}"
    else:
        path = Path(source)
        if not path.exists():
            raise ExperimentError(f"{source}: no such config file or built-in config")
        text, origin = path.read_text(), str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"{origin}: parse error: {exc}") from exc
    if seed is not None:
        data["seeds"] = [seed]
    if k is not None:
        data["k"] = k
    if algorithm is not None:
        data["algorithm"] = algorithm
    if output_dir is not None:
        data["output_dir"] = output_dir
    if episodes is not None:
        data.setdefault("train", {})["episodes"] = episodes
    return config_from_dict(data)


# ----------------------------------------------------------------------
# Environments and learners
# ----------------------------------------------------------------------

def build_env(env_cfg: dict):
    kind = env_cfg["kind"]
    if kind == "routing":
        topo = load_topology(env_cfg.get("topology", "simple"))
        horizon = int(env_cfg.get("horizon", 10))
        source = env_cfg.get("trace", "static")
        steps = int(env_cfg.get("trace_steps", 1000))
        if source == "static":
            trace = static_trace(topo, max(steps, horizon + 1))
        elif source == "synthetic":
            trace = synthetic_trace(topo, steps, seed=int(env_cfg.get("trace_seed", 0)))
        else:
            trace = load_trace(source)
        if env_cfg.get("scale") is not None:
            trace = scale_trace(trace, topo, float(env_cfg["scale"]))
        return RoutingEnv(topo, trace, horizon=horizon, gamma=float(env_cfg.get("gamma", 0.95)),
                          exploration_bonus=float(env_cfg.get("exploration_bonus", 0.0)),
                          random_offset=source != "static")
    if kind == "particle":
        return ParticleEnv(ParticleConfig(**{k: v for k, v in env_cfg.items() if k != "kind"}))
    if kind == "toy":
        return TargetReachEnv(horizon=int(env_cfg.get("horizon", 5)), reach=float(env_cfg.get("reach", 0.8)),
                              gamma=float(env_cfg.get("gamma", 0.0)))
    raise ExperimentError(f"unknown env kind {kind!r}")


def build_learner(cfg: ExperimentConfig, env, seed: int):
    if cfg.algorithm == "ddpg-single":
        return DDPG(env.spec, cfg.train, seed)
    if cfg.algorithm == "wcmp":
        raise ExperimentError("wcmp is a static heuristic and has no learner")
    return MultiAgentLearner(env.spec, cfg.algorithm, cfg.train, seed)


def final_window(rows: Sequence[dict], fraction: float = FINAL_WINDOW_FRACTION) -> list[dict]:
    """The last ``ceil(fraction * len(rows))`` rows (at least one)."""
    if not rows:
        return []
    n = max(1, math.ceil(fraction * len(rows)))
    return list(rows[-n:])


def _dump_jsonl(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ----------------------------------------------------------------------
# Running
# ----------------------------------------------------------------------

def run_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return cfg.resolved_output() / cfg.algorithm / f"seed-{seed}"


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """Train (or evaluate, for WCMP) one seed; writes the run directory and returns its status record."""
    out = run_dir(cfg, seed)
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(cfg.env)
    run_id = f"{cfg.name}/{cfg.algorithm}/seed-{seed}"
    base = {"run": run_id, "seed": seed, "algorithm": cfg.algorithm, "env": cfg.env_label()}
    rows, timing = [], []
    status = {"run": run_id, "seed": seed, "status": "ok", "error": None}
    start = time.perf_counter()

    if cfg.algorithm == "wcmp":
        static = wcmp_policy(env.topology)
        result = evaluate(env, lambda obs: [a.copy() for a in static], seed, cfg.eval_episodes)
        rows.append({**base, "episode": 0, "reward": result["reward"], "mean_reward": result["mean_reward"],
                     "critic_loss": None, "actor_objective": None, "info": result["info"],
                     "evaluation_episodes": cfg.eval_episodes})
        timing.append({"episode": 0, "wall_clock": time.perf_counter() - start})
        eval_result = result
    else:
        learner = build_learner(cfg, env, seed)
        eval_result = None
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                for row in train_iter(env, learner, seed):
                    rows.append({**base, **row})
                    timing.append({"episode": row["episode"], "wall_clock": time.perf_counter() - start})
            eval_result = evaluate(env, learner.policy, seed + 1_000_003, cfg.eval_episodes)
        except FloatingPointError as exc:
            status.update(status="failed", error=f"non-finite value at episode {len(rows)}: {exc}")
        extra = {"experiment": cfg.to_dict(), "seed": seed, "status": status["status"]}
        if cfg.algorithm == "ddpg-single":
            np.savez(out / "checkpoint.npz", meta=np.array(json.dumps({**extra, "algorithm": "ddpg-single"})),
                     actor=learner.actor.params, critic=learner.critic.params)
        else:
            learner.save(out / "checkpoint.npz", extra)

    _dump_jsonl(out / "metrics.jsonl", rows)
    _dump_jsonl(out / "timing.jsonl", timing)
    with open(out / "eval.json", "w") as fh:
        json.dump(eval_result, fh, sort_keys=True, indent=1)
    window = final_window(rows)
    status["episodes"] = len(rows)
    status["final_window_reward"] = float(np.mean([r["mean_reward"] for r in window])) if window else None
    info_keys = window[0]["info"].keys() if window else ()
    status["final_window_info"] = {k: float(np.mean([r["info"][k] for r in window])) for k in info_keys}
    status["eval"] = eval_result
    return status


def summarize(statuses: Sequence[dict]) -> dict:
    ok = [s for s in statuses if s["status"] == "ok" and s["final_window_reward"] is not None]
    vals = np.array([s["final_window_reward"] for s in ok])
    return {
        "runs": list(statuses),
        "completed": len(ok),
        "failed": len(statuses) - len(ok),
        "final_window_fraction": FINAL_WINDOW_FRACTION,
        "final_window_reward_mean": float(vals.mean()) if ok else None,
        "final_window_reward_std": float(vals.std()) if ok else None,
        "final_window_reward_median": float(np.median(vals)) if ok else None,
    }


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Run every seed, then write and return the summary (mean +- population std of final-window reward)."""
    root = cfg.resolved_output() / cfg.algorithm
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=1)
    if workers > 1 and len(cfg.seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            statuses = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        statuses = [run_seed(cfg, s) for s in cfg.seeds]
    summary = summarize(statuses)
    summary.update(name=cfg.name, algorithm=cfg.algorithm, env=cfg.env_label(), k=cfg.k)
    with open(root / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return summary


# ----------------------------------------------------------------------
# Checkpoints: evaluation and attention inspection
# ----------------------------------------------------------------------

def load_learner(checkpoint: str | Path):
    """Rebuild the environment and learner recorded in a training checkpoint."""
    meta, arrays = read_checkpoint(checkpoint)
    extra = meta.get("extra", {})
    if "experiment" not in extra:
        raise ExperimentError(f"{checkpoint}: not a training checkpoint written by run_experiment")
    cfg = config_from_dict(extra["experiment"])
    env = build_env(cfg.env)
    if meta.get("algorithm") == "ddpg-single" or cfg.algorithm == "ddpg-single":
        agent = DDPG(env.spec, cfg.train, extra["seed"])
        agent.actor.set_flat(arrays["actor"])
        agent.critic.set_flat(arrays["critic"])
        return cfg, env, agent, extra["seed"]
    learner = MultiAgentLearner(env.spec, cfg.algorithm, cfg.train, extra["seed"])
    learner.load_state_dict(meta, arrays)
    return cfg, env, learner, extra["seed"]


def evaluate_checkpoint(checkpoint: str | Path, episodes: int = 10, seed: int | None = None) -> dict:
    cfg, env, learner, run_seed_ = load_learner(checkpoint)
    return evaluate(env, learner.policy, run_seed_ + 1_000_003 if seed is None else seed, episodes)


@dataclass
class AttentionDump:
    indices: np.ndarray       # (n,) buffer rows sampled
    weights: np.ndarray       # (N_agents, n, K)
    head_values: np.ndarray   # (N_agents, n, K) scalar Q of each head through the output layer
    q_values: np.ndarray      # (N_agents, n)

    @property
    def mean_weights(self) -> np.ndarray:
        return self.weights.mean(axis=1)


def _refill(learner, env, n: int, seed: int) -> None:
    """Roll out the trained policy with its final exploration noise until the buffer holds ``n`` rows."""
    sigma = learner.config.sigma(max(0, learner.episodes_done - 1))
    episode = 0
    while len(learner.buffer) < n:
        obs = env.reset(episode_seed(seed + 7_919, episode))
        for _ in range(env.spec.horizon):
            actions = learner.act(obs, sigma)
            res = env.step(actions)
            learner.buffer.push(Transition(obs, actions, res.rewards, res.observations, res.terminal))
            obs = res.observations
            if res.terminal:
                break
        episode += 1


def inspect_attention(checkpoint: str | Path, n_samples: int = 3000, seed: int = 0) -> AttentionDump:
    """Per-head scalar Q-values and attention weights on ``n_samples`` buffer transitions."""
    cfg, env, learner, run_seed_ = load_learner(checkpoint)
    if cfg.algorithm != "att-maddpg":
        raise ExperimentError(f"{checkpoint}: holds a {cfg.algorithm!r} agent; attention needs 'att-maddpg'")
    if n_samples > learner.buffer.capacity:
        raise ExperimentError(f"n_samples {n_samples} exceeds buffer capacity {learner.buffer.capacity}")
    _refill(learner, env, n_samples, run_seed_)
    idx = np.sort(np.random.default_rng(seed).choice(len(learner.buffer), size=n_samples, replace=False))
    batch = learner.buffer.gather(idx)
    weights, values, qs = [], [], []
    for i, ag in enumerate(learner.agents):
        inputs = learner.critic_inputs(batch.obs, batch.actions, i)
        d = ag.critic.diagnostics(*inputs)
        weights.append(d.weights)
        values.append(d.head_values)
        qs.append(ag.critic.forward(*inputs)[:, 0])
    return AttentionDump(idx, np.stack(weights), np.stack(values), np.stack(qs))


def write_attention_dump(dump: AttentionDump, out_dir: str | Path, n_show: int = 30) -> dict[str, Path]:
    """Write the full dump (npz) and a display subset of the first ``n_show`` samples (CSV)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    full = out / "attention_dump.npz"
    np.savez(full, indices=dump.indices, weights=dump.weights, head_values=dump.head_values, q=dump.q_values)
    n_agents, _, k = dump.weights.shape
    show = out / "attention_show.csv"
    with open(show, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "agent", "buffer_index", "q"] + [f"head_q{j + 1}" for j in range(k)]
                   + [f"weight{j + 1}" for j in range(k)])
        for s in range(min(n_show, dump.indices.size)):
            for i in range(n_agents):
                w.writerow([s, i, int(dump.indices[s]), repr(float(dump.q_values[i, s]))]
                           + [repr(float(v)) for v in dump.head_values[i, s]]
                           + [repr(float(v)) for v in dump.weights[i, s]])
    return {"full": full, "show": show}


# ----------------------------------------------------------------------
# Curve export
# ----------------------------------------------------------------------

def smooth(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average: point ``t`` averages episodes ``max(0, t-window+1) .. t``."""
    if window < 1:
        raise ExperimentError("smoothing window must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    return np.array([v[max(0, t - window + 1):t + 1].mean() for t in range(v.size)])


def collect_runs(metrics_dir: str | Path) -> dict[str, list[list[dict]]]:
    """All ``metrics.jsonl`` files below ``metrics_dir`` grouped by algorithm label."""
    files = sorted(Path(metrics_dir).rglob("metrics.jsonl"))
    runs: dict[str, list[list[dict]]] = {}
    envs = set()
    for f in files:
        rows = read_jsonl(f)
        if not rows:
            continue
        envs.add(rows[0]["env"])
        label = rows[0]["algorithm"]
        runs.setdefault(label, []).append(rows)
    if not runs:
        raise ExperimentError(f"{metrics_dir}: no completed runs found")
    if len(envs) > 1:
        raise ExperimentError(f"{metrics_dir}: runs mix environments {sorted(envs)}; export one at a time")
    return runs


def curve_table(metrics_dir: str | Path, window: int = 1) -> tuple[list[str], list[list]]:
    """Wide table: ``episode`` then ``<algo>_mean, <algo>_std, <algo>_n`` per algorithm.

    Each run's ``mean_reward`` series is smoothed first; the cross-seed
    statistics at an episode use every run that reached it, with the
    population standard deviation (divide by n).
    """
    runs = collect_runs(metrics_dir)
    algos = sorted(runs)
    series = {a: [smooth([r["mean_reward"] for r in rows], window) for rows in runs[a]] for a in algos}
    length = max(len(s) for ss in series.values() for s in ss)
    header = ["episode"] + [f"{a}_{stat}" for a in algos for stat in ("mean", "std", "n")]
    table = []
    for ep in range(length):
        row: list = [ep]
        for a in algos:
            vals = np.array([s[ep] for s in series[a] if ep < len(s)])
            row += [float(vals.mean()), float(vals.std()), int(vals.size)] if vals.size else ["", "", 0]
        table.append(row)
    return header, table


def export_curves(metrics_dir: str | Path, out: str | Path | None = None, window: int = 1) -> Path:
    header, table = curve_table(metrics_dir, window)
    path = Path(out) if out else Path(metrics_dir) / "curves.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path
