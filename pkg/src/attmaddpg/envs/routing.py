"""Flow-splitting traffic-engineering simulator.

Edge routers (agents) split the demand of each ingress-egress pair they own
over a fixed set of candidate paths.  Link utilization is carried flow over
capacity; every agent receives ``1 - MLU`` where MLU is the maximum link
utilization in the network.

Topology file schema (JSON)::

    {
      "name": str,
      "nodes": [node_id, ...],
      "links": [{"id": str, "src": node_id, "dst": node_id, "capacity": float}, ...],
      "agents": [node_id, ...],            # controlling edge routers, in agent order
      "ie_pairs": [{"id": str, "agent": node_id, "src": node_id, "dst": node_id,
                    "paths": [[link_id, ...], ...]}, ...],
      "demand": {ie_pair_id: float, ...}   # optional nominal static demand
    }

Trace file schema (CSV): a header row of IE-pair ids, then one row of decimal
flow values per timestep.

Per-agent observation layout, in this order:

1. demand of each owned IE-pair at the current step, divided by that pair's
   max-flow over its candidate-path links (IE-pair order);
2. the agent's previous action (uniform split after reset);
3. previous-step utilization of every link on the agent's candidate paths
   (topology link order; zeros after reset).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .base import ActionSpace, ContractViolation, EnvironmentSpec, StepResult, check_actions


class TopologyError(ValueError):
    """Malformed topology or trace description."""


class OracleBudgetError(ValueError):
    """Grid search would exceed its evaluation budget."""


BUILTIN_TOPOLOGIES = ("simple", "complex")


@dataclass(frozen=True)
class Link:
    id: str
    src: str
    dst: str
    capacity: float


@dataclass(frozen=True)
class IEPair:
    id: str
    agent: str
    src: str
    dst: str
    paths: tuple[tuple[str, ...], ...]


@dataclass
class Topology:
    name: str
    nodes: list[str]
    links: list[Link]
    agents: list[str]
    ie_pairs: list[IEPair]
    nominal_demand: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()
        self.link_index = {l.id: i for i, l in enumerate(self.links)}
        self.capacities = np.array([l.capacity for l in self.links], dtype=np.float64)
        # column p of incidence = path p (pairs in order, paths in order)
        self.path_pair: list[int] = []
        cols = []
        for pi, pair in enumerate(self.ie_pairs):
            for path in pair.paths:
                col = np.zeros(len(self.links))
                for lid in path:
                    col[self.link_index[lid]] = 1.0
                cols.append(col)
                self.path_pair.append(pi)
        self.incidence = np.stack(cols, axis=1)
        self.path_pair_arr = np.array(self.path_pair)
        self.agent_pairs = [[pi for pi, p in enumerate(self.ie_pairs) if p.agent == a] for a in self.agents]
        self.agent_groups = [tuple(len(self.ie_pairs[pi].paths) for pi in pairs) for pairs in self.agent_pairs]
        self.agent_links = []
        for pairs in self.agent_pairs:
            used = {self.link_index[lid] for pi in pairs for path in self.ie_pairs[pi].paths for lid in path}
            self.agent_links.append(sorted(used))
        self.direct_links = [[i for i, l in enumerate(self.links) if l.src == a] for a in self.agents]
        self.pair_capacity = np.array([pair_max_flow(self, pi) for pi in range(len(self.ie_pairs))])

    def validate(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise TopologyError("duplicate node ids")
        nodes = set(self.nodes)
        link_ids = set()
        for l in self.links:
            if l.id in link_ids:
                raise TopologyError(f"duplicate link id {l.id!r}")
            link_ids.add(l.id)
            if l.src not in nodes or l.dst not in nodes:
                raise TopologyError(f"link {l.id!r} references unknown node")
            if not (l.capacity > 0 and math.isfinite(l.capacity)):
                raise TopologyError(f"link {l.id!r} capacity must be positive and finite")
        by_id = {l.id: l for l in self.links}
        if not self.agents:
            raise TopologyError("no agents")
        pair_ids = set()
        for pair in self.ie_pairs:
            if pair.id in pair_ids:
                raise TopologyError(f"duplicate IE-pair id {pair.id!r}")
            pair_ids.add(pair.id)
            if pair.agent not in self.agents:
                raise TopologyError(f"IE-pair {pair.id!r} assigned to unknown agent {pair.agent!r}")
            if not pair.paths:
                raise TopologyError(f"IE-pair {pair.id!r} has no paths")
            for k, path in enumerate(pair.paths):
                where = f"IE-pair {pair.id!r} path {k}"
                if not path:
                    raise TopologyError(f"{where} is empty")
                for lid in path:
                    if lid not in by_id:
                        raise TopologyError(f"{where} references unknown link {lid!r}")
                if len(set(path)) != len(path):
                    raise TopologyError(f"{where} repeats a link")
                at = pair.src
                for lid in path:
                    if by_id[lid].src != at:
                        raise TopologyError(f"{where} is disconnected at link {lid!r} (expected start {at!r})")
                    at = by_id[lid].dst
                if at != pair.dst:
                    raise TopologyError(f"{where} ends at {at!r}, not {pair.dst!r}")
        for a in self.agents:
            owned = [p for p in self.ie_pairs if p.agent == a]
            if not any(len(p.paths) >= 2 for p in owned):
                raise TopologyError(f"agent {a!r} controls no IE-pair with >= 2 paths")
        for pid, d in self.nominal_demand.items():
            if pid not in pair_ids:
                raise TopologyError(f"demand for unknown IE-pair {pid!r}")
            if not (d >= 0 and math.isfinite(d)):
                raise TopologyError(f"demand for {pid!r} must be finite and >= 0")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_paths(self) -> int:
        return self.incidence.shape[1]

    def static_demand(self) -> np.ndarray:
        return np.array([self.nominal_demand.get(p.id, 0.0) for p in self.ie_pairs])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodes": list(self.nodes),
            "links": [{"id": l.id, "src": l.src, "dst": l.dst, "capacity": l.capacity} for l in self.links],
            "agents": list(self.agents),
            "ie_pairs": [{"id": p.id, "agent": p.agent, "src": p.src, "dst": p.dst,
                          "paths": [list(path) for path in p.paths]} for p in self.ie_pairs],
            "demand": dict(self.nominal_demand),
        }


def topology_from_dict(data: dict) -> Topology:
    try:
        links = [Link(str(l["id"]), str(l["src"]), str(l["dst"]), float(l["capacity"])) for l in data["links"]]
        pairs = [
            IEPair(str(p["id"]), str(p["agent"]), str(p["src"]), str(p["dst"]),
                   tuple(tuple(str(x) for x in path) for path in p["paths"]))
            for p in data["ie_pairs"]
        ]
        return Topology(
            name=str(data.get("name", "topology")),
            nodes=[str(n) for n in data["nodes"]],
            links=links,
            agents=[str(a) for a in data["agents"]],
            ie_pairs=pairs,
            nominal_demand={str(k): float(v) for k, v in data.get("demand", {}).items()},
        )
    except (KeyError, TypeError) as exc:
        raise TopologyError(f"missing or malformed field: {exc}") from exc


def load_topology(source: str | Path) -> Topology:
    """Load a topology by built-in name (``simple``, ``complex``) or JSON path."""
    if str(source) in BUILTIN_TOPOLOGIES:
        text = resources.files("attmaddpg.fixtures").joinpath(f"{source}.json").read_text()
        origin = f"built-in {source}"
    else:
        path = Path(source)
        if not path.exists():
            raise TopologyError(f"{source}: no such file or built-in topology")
        text = path.read_text()
        origin = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"{origin}: parse error: {exc}") from exc
    return topology_from_dict(data)


def pair_max_flow(topo: Topology, pair_index: int) -> float:
    """Max flow from the pair's source to sink using only its candidate-path links."""
    pair = topo.ie_pairs[pair_index]
    cap: dict[str, dict[str, float]] = {}
    for path in pair.paths:
        for lid in path:
            l = topo.links[topo.link_index[lid]]
            cap.setdefault(l.src, {}).setdefault(l.dst, 0.0)
            cap[l.src][l.dst] = l.capacity
            cap.setdefault(l.dst, {}).setdefault(l.src, 0.0)
    flow = 0.0
    while True:
        parent = {pair.src: None}
        queue = deque([pair.src])
        while queue and pair.dst not in parent:
            u = queue.popleft()
            for v, c in cap[u].items():
                if c > 1e-12 and v not in parent:
                    parent[v] = u
                    queue.append(v)
        if pair.dst not in parent:
            return flow
        bottleneck = math.inf
        v = pair.dst
        while parent[v] is not None:
            bottleneck = min(bottleneck, cap[parent[v]][v])
            v = parent[v]
        v = pair.dst
        while parent[v] is not None:
            u = parent[v]
            cap[u][v] -= bottleneck
            cap[v][u] += bottleneck
            v = u
        flow += bottleneck


# ----------------------------------------------------------------------
# Traces
# ----------------------------------------------------------------------

@dataclass
class FlowTrace:
    pair_ids: list[str]
    demands: np.ndarray  # (steps, n_pairs)

    def __post_init__(self):
        self.demands = np.asarray(self.demands, dtype=np.float64)
        if self.demands.ndim != 2 or self.demands.shape[1] != len(self.pair_ids):
            raise TopologyError(f"trace shape {self.demands.shape} does not match {len(self.pair_ids)} IE-pairs")
        if not np.all(np.isfinite(self.demands)) or np.any(self.demands < 0):
            raise TopologyError("trace demands must be finite and >= 0")

    def __len__(self) -> int:
        return self.demands.shape[0]

    def aligned(self, topo: Topology) -> np.ndarray:
        """Demands with columns in the topology's IE-pair order."""
        col = {pid: j for j, pid in enumerate(self.pair_ids)}
        missing = [p.id for p in topo.ie_pairs if p.id not in col]
        if missing:
            raise TopologyError(f"trace lacks IE-pairs {missing}")
        return self.demands[:, [col[p.id] for p in topo.ie_pairs]]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.pair_ids)
            for row in self.demands:
                w.writerow([repr(float(v)) for v in row])


def load_trace(path: str | Path) -> FlowTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TopologyError(f"{path}: empty trace file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    try:
        values = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise TopologyError(f"{path}: parse error: {exc}") from exc
    if values.size == 0:
        raise TopologyError(f"{path}: no data rows")
    if values.shape[1] != len(header):
        raise TopologyError(f"{path}: rows have {values.shape[1]} columns, header has {len(header)}")
    return FlowTrace(header, values)


def static_trace(topo: Topology, steps: int, demand: Sequence[float] | None = None) -> FlowTrace:
    d = topo.static_demand() if demand is None else np.asarray(demand, dtype=np.float64)
    return FlowTrace([p.id for p in topo.ie_pairs], np.tile(d, (steps, 1)))


def synthetic_trace(topo: Topology, steps: int = 1000, seed: int = 0, amplitude: float = 0.3,
                    period: float = 50.0, noise: float = 0.05) -> FlowTrace:
    """Nominal demand modulated by a per-pair phase-shifted sinusoid plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    base = topo.static_demand()
    phases = rng.uniform(0.0, 2 * np.pi, size=base.size)
    t = np.arange(steps)[:, None]
    wave = 1.0 + amplitude * np.sin(2 * np.pi * t / period + phases[None, :])
    d = base[None, :] * (wave + noise * rng.standard_normal((steps, base.size)))
    return FlowTrace([p.id for p in topo.ie_pairs], np.maximum(d, 0.0))


def scale_trace(trace: FlowTrace, topo: Topology, fraction: float = 0.8) -> FlowTrace:
    """Rescale so the peak per-step total demand is ``fraction`` of the summed pair max-flows."""
    d = trace.aligned(topo)
    peak = d.sum(axis=1).max()
    if peak <= 0:
        return FlowTrace([p.id for p in topo.ie_pairs], d)
    factor = fraction * topo.pair_capacity.sum() / peak
    return FlowTrace([p.id for p in topo.ie_pairs], d * factor)


# ----------------------------------------------------------------------
# Pure helpers
# ----------------------------------------------------------------------

def _path_ratios(topo: Topology, actions: Sequence[np.ndarray]) -> np.ndarray:
    """Flatten per-agent actions into one ratio per path (topology path order)."""
    y = np.zeros(topo.n_paths)
    col = 0
    starts = []
    for pair in topo.ie_pairs:
        starts.append(col)
        col += len(pair.paths)
    for agent, pairs in enumerate(topo.agent_pairs):
        a = np.asarray(actions[agent], dtype=np.float64)
        pos = 0
        for pi in pairs:
            n = len(topo.ie_pairs[pi].paths)
            y[starts[pi]:starts[pi] + n] = a[pos:pos + n]
            pos += n
    return y


def compute_utilizations(topo: Topology, actions: Sequence[np.ndarray], demands: np.ndarray) -> np.ndarray:
    """Per-link utilization ``U_l = sum_{i,k: l in P_i^k} F_i y_i^k / C_l``."""
    y = _path_ratios(topo, actions)
    path_flow = np.asarray(demands, dtype=np.float64)[topo.path_pair_arr] * y
    return (topo.incidence @ path_flow) / topo.capacities


def mlu_reward(topo: Topology, utilization: np.ndarray, bonus: float = 0.0) -> np.ndarray:
    """``1 - max_l U_l`` for every agent, plus an optional local exploration bonus.

    The bonus adds ``bonus * (1 - max U over the agent's outgoing links)``.
    """
    utilization = np.asarray(utilization)
    base = 1.0 - float(np.max(utilization)) if utilization.size else 1.0
    r = np.full(topo.n_agents, base)
    if bonus:
        for i, links in enumerate(topo.direct_links):
            local = float(np.max(utilization[links])) if links else 0.0
            r[i] += bonus * (1.0 - local)
    return r


def wcmp_policy(topo: Topology) -> list[np.ndarray]:
    """Static split proportional to each path's bottleneck capacity."""
    actions = []
    for pairs in topo.agent_pairs:
        parts = []
        for pi in pairs:
            bottleneck = np.array([min(topo.capacities[topo.link_index[l]] for l in path)
                                   for path in topo.ie_pairs[pi].paths])
            parts.append(bottleneck / bottleneck.sum())
        actions.append(np.concatenate(parts))
    return actions


def simplex_grid(n: int, resolution: int) -> np.ndarray:
    """All points of the n-simplex with coordinates in multiples of 1/resolution."""
    pts = []
    for bars in itertools.combinations(range(resolution + n - 1), n - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(resolution + n - 1 - prev - 1)
        pts.append(counts)
    return np.array(pts, dtype=np.float64) / resolution


def grid_search_oracle(topo: Topology, demands: Sequence[float], resolution: int = 20,
                       max_evaluations: int = 2_000_000) -> tuple[list[np.ndarray], float]:
    """Exhaustive minimization of MLU over a simplex grid of joint splitting ratios.

    Returns per-agent actions and the minimal MLU (first minimizer in
    enumeration order on ties).
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    demands = np.asarray(demands, dtype=np.float64)
    grids = [simplex_grid(len(p.paths), resolution) for p in topo.ie_pairs]
    total = math.prod(len(g) for g in grids)
    if total > max_evaluations:
        raise OracleBudgetError(
            f"{total} joint grid points exceed budget {max_evaluations}; use a coarser resolution"
        )
    # per-pair link-utilization contribution of every grid point: (points, links)
    contrib = []
    col = 0
    for pi, (pair, g) in enumerate(zip(topo.ie_pairs, grids)):
        n = len(pair.paths)
        inc = topo.incidence[:, col:col + n]
        contrib.append((g * demands[pi]) @ inc.T / topo.capacities)
        col += n
    last = contrib[-1]
    best = (math.inf, None)
    for idx in itertools.product(*(range(len(g)) for g in grids[:-1])):
        base = sum((contrib[j][i] for j, i in enumerate(idx)), np.zeros(len(topo.links)))
        mlu = np.max(base[None, :] + last, axis=1)
        k = int(np.argmin(mlu))
        if mlu[k] < best[0]:
            best = (float(mlu[k]), idx + (k,))
    choice = [grids[j][i] for j, i in enumerate(best[1])]
    actions = [np.concatenate([choice[pi] for pi in pairs]) for pairs in topo.agent_pairs]
    return actions, best[0]


# ----------------------------------------------------------------------
# Environment
# ----------------------------------------------------------------------

@dataclass
class LinkState:
    """Utilizations from the most recent step and the step before it.

    Observations expose ``current``, which is one step stale relative to the
    action being chosen.
    """

    current: np.ndarray
    previous: np.ndarray


class RoutingEnv:
    """Multi-agent flow-splitting environment over a :class:`Topology`.

    Each ``reset`` picks a window of the trace starting at a seed-dependent
    offset (offset 0 when ``random_offset`` is False).  Episodes end after
    ``horizon`` steps.
    """

    def __init__(self, topology: Topology, trace: FlowTrace | None = None, horizon: int = 10,
                 gamma: float = 0.95, exploration_bonus: float = 0.0, random_offset: bool = True):
        self.topology = topology
        self.trace = trace if trace is not None else static_trace(topology, horizon + 1)
        self.demands = self.trace.aligned(topology)
        if len(self.trace) < horizon:
            raise TopologyError(f"trace has {len(self.trace)} steps, horizon needs {horizon}")
        self.horizon = horizon
        self.exploration_bonus = exploration_bonus
        self.random_offset = random_offset
        obs_dims = tuple(
            len(pairs) + sum(groups) + len(links)
            for pairs, groups, links in zip(topology.agent_pairs, topology.agent_groups, topology.agent_links)
        )
        spaces = tuple(ActionSpace.simplex(*groups) for groups in topology.agent_groups)
        self.spec = EnvironmentSpec(topology.n_agents, obs_dims, spaces, gamma, horizon)
        self.t = 0
        self.offset = 0
        self.prev_actions = self.uniform_actions()
        self.links = LinkState(np.zeros(len(topology.links)), np.zeros(len(topology.links)))

    def uniform_actions(self) -> list[np.ndarray]:
        return [np.concatenate([np.full(g, 1.0 / g) for g in groups]) for groups in self.topology.agent_groups]

    def current_demand(self) -> np.ndarray:
        return self.demands[min(self.offset + self.t, len(self.demands) - 1)]

    def reset(self, seed: int) -> list[np.ndarray]:
        rng = np.random.default_rng(seed)
        span = len(self.demands) - self.horizon
        self.offset = int(rng.integers(0, span + 1)) if (self.random_offset and span > 0) else 0
        self.t = 0
        self.prev_actions = self.uniform_actions()
        zeros = np.zeros(len(self.topology.links))
        self.links = LinkState(zeros.copy(), zeros.copy())
        return self.observations()

    def observation(self, agent: int) -> np.ndarray:
        topo = self.topology
        pairs = topo.agent_pairs[agent]
        d = self.current_demand()[pairs] / topo.pair_capacity[pairs]
        return np.concatenate([d, self.prev_actions[agent], self.links.current[topo.agent_links[agent]]])

    def observations(self) -> list[np.ndarray]:
        return [self.observation(i) for i in range(self.topology.n_agents)]

    def step(self, actions: Sequence[np.ndarray]) -> StepResult:
        actions = check_actions(self.spec, actions)
        for i, (a, space) in enumerate(zip(actions, self.spec.action_spaces)):
            if not space.contains(a):
                raise ContractViolation(f"agent {i}: action {a} is not a valid split")
        if self.t >= self.horizon:
            raise ContractViolation("episode finished; call reset()")
        demand = self.current_demand()
        u = compute_utilizations(self.topology, actions, demand)
        rewards = mlu_reward(self.topology, u, self.exploration_bonus)
        self.links = LinkState(current=u, previous=self.links.current)
        self.prev_actions = [a.copy() for a in actions]
        self.t += 1
        return StepResult(self.observations(), rewards, self.t >= self.horizon,
                          {"mlu": float(np.max(u)), "utilization": u})
