"""Command-line entry point: ``attmaddpg <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .envs.routing import (
    TopologyError, OracleBudgetError, compute_utilizations, grid_search_oracle, load_topology, load_trace,
    topology_from_dict, wcmp_policy,
)
from .numcore import ConfigurationError


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def cmd_train(args) -> int:
    cfg = ex.load_config(args.config, seed=args.seed, k=args.k, algorithm=args.algo,
                         output_dir=args.output, episodes=args.episodes)
    summary = ex.run_experiment(cfg, workers=args.workers)
    out = cfg.resolved_output() / cfg.algorithm
    print(f"{cfg.name} [{cfg.algorithm}, {cfg.env_label()}] -> {out}")
    for run in summary["runs"]:
        fw = run["final_window_reward"]
        fw = "n/a" if fw is None else f"{fw:.4f}"
        print(f"  seed {run['seed']}: {run['status']}, {run['episodes']} episodes, final-window reward {fw}"
              + (f" ({run['error']})" if run["error"] else ""))
    if summary["completed"]:
        print(f"  final-window reward {summary['final_window_reward_mean']:.4f} "
              f"+- {summary['final_window_reward_std']:.4f} over {summary['completed']} seed(s)")
    return 0 if summary["failed"] == 0 else 3


def cmd_eval(args) -> int:
    _print_json(ex.evaluate_checkpoint(args.checkpoint, args.episodes, args.seed))
    return 0


def cmd_inspect(args) -> int:
    dump = ex.inspect_attention(args.checkpoint, args.samples, args.seed)
    out = Path(args.output) if args.output else Path(args.checkpoint).parent / "attention"
    paths = ex.write_attention_dump(dump, out, args.show)
    k = dump.weights.shape[-1]
    for i, mean in enumerate(dump.mean_weights):
        top = int(np.argmax(mean))
        print(f"agent {i}: mean weights {np.round(mean, 4).tolist()} (head {top + 1} dominant; uniform 1/{k})")
    print(f"full dump: {paths['full']}\ndisplay subset: {paths['show']}")
    return 0


def cmd_export(args) -> int:
    path = ex.export_curves(args.dir, args.output, args.smooth)
    print(path)
    return 0


def cmd_validate(args) -> int:
    path = Path(args.file)
    if path.suffix.lower() == ".csv":
        trace = load_trace(path)
        if args.topology:
            trace.aligned(load_topology(args.topology))
        tmp = path.with_suffix(".roundtrip.csv") if args.write is None else Path(args.write)
        trace.to_csv(tmp)
        again = load_trace(tmp)
        if args.write is None:
            tmp.unlink()
        ok = again.pair_ids == trace.pair_ids and np.array_equal(again.demands, trace.demands)
        print(f"trace OK: {len(trace)} steps x {len(trace.pair_ids)} IE-pairs; round trip "
              f"{'exact' if ok else 'MISMATCH'}")
        return 0 if ok else 1
    topo = load_topology(path)
    again = topology_from_dict(json.loads(json.dumps(topo.to_dict())))
    ok = again.to_dict() == topo.to_dict()
    if args.write:
        Path(args.write).write_text(json.dumps(topo.to_dict(), indent=1))
    print(f"topology OK: {topo.name}, {len(topo.nodes)} nodes, {len(topo.links)} links, {topo.n_agents} agents, "
          f"{topo.n_paths} paths; round trip {'exact' if ok else 'MISMATCH'}")
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    topo = load_topology(args.topology)
    demand = (np.array([float(x) for x in args.demand.split(",")]) if args.demand else topo.static_demand())
    if demand.shape != (len(topo.ie_pairs),):
        raise ConfigurationError(f"--demand needs {len(topo.ie_pairs)} comma-separated values")
    actions, mlu = grid_search_oracle(topo, demand, args.resolution)
    wcmp = wcmp_policy(topo)
    _print_json({
        "topology": topo.name, "resolution": args.resolution, "demand": demand,
        "oracle_mlu": mlu, "oracle_splits": {a: act for a, act in zip(topo.agents, actions)},
        "wcmp_mlu": float(compute_utilizations(topo, wcmp, demand).max()),
        "wcmp_splits": {a: act for a, act in zip(topo.agents, wcmp)},
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attmaddpg", description="Attention-critic multi-agent RL experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run every seed of an experiment config")
    t.add_argument("config", help=f"config path or built-in name ({', '.join(ex.BUILTIN_CONFIGS)})")
    t.add_argument("--seed", type=int, help="run only this seed")
    t.add_argument("--k", type=int, help="override the head count")
    t.add_argument("--algo", choices=ex.ALGORITHMS, help="override the algorithm")
    t.add_argument("--episodes", type=int, help="override train.episodes")
    t.add_argument("--output", help=f"output directory (default ${ex.OUTPUT_ENV_VAR}/<name>)")
    t.add_argument("--workers", type=int, default=1, help="parallel seed processes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a training checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect-attention", help="per-head Q-values and attention weights on sampled transitions")
    i.add_argument("checkpoint")
    i.add_argument("--samples", type=int, default=3000)
    i.add_argument("--show", type=int, default=30)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--output", help="output directory (default: <checkpoint dir>/attention)")
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("export-curves", help="cross-seed reward curves as a wide CSV")
    c.add_argument("dir")
    c.add_argument("--output")
    c.add_argument("--smooth", type=int, default=1, help="trailing moving-average window (1 = raw)")
    c.set_defaults(func=cmd_export)

    v = sub.add_parser("validate", help="check a topology (.json) or trace (.csv) file and its round trip")
    v.add_argument("file")
    v.add_argument("--topology", help="for traces: check IE-pair columns against this topology")
    v.add_argument("--write", help="write the normalized form here")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="grid-search the MLU-optimal splits of a topology")
    o.add_argument("topology")
    o.add_argument("--resolution", type=int, default=20)
    o.add_argument("--demand", help="comma-separated demand per IE-pair (default: nominal)")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, TopologyError, OracleBudgetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
