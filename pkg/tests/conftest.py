import numpy as np
import pytest

from attmaddpg.envs.routing import topology_from_dict


def two_path_topology(cap_a=10.0, cap_b=10.0, demand=10.0):
    """One agent S, one IE-pair S->T over two disjoint single-link paths."""
    return topology_from_dict({
        "name": "two-path",
        "nodes": ["S", "T"],
        "links": [{"id": "a", "src": "S", "dst": "T", "capacity": cap_a},
                  {"id": "b", "src": "S", "dst": "T", "capacity": cap_b}],
        "agents": ["S"],
        "ie_pairs": [{"id": "S>T", "agent": "S", "src": "S", "dst": "T", "paths": [["a"], ["b"]]}],
        "demand": {"S>T": demand},
    })


def shared_link_topology():
    """Two agents whose first path crosses the same M->T link (capacity 10)."""
    return topology_from_dict({
        "name": "shared",
        "nodes": ["S1", "S2", "M", "T"],
        "links": [
            {"id": "S1-M", "src": "S1", "dst": "M", "capacity": 20},
            {"id": "S2-M", "src": "S2", "dst": "M", "capacity": 20},
            {"id": "M-T", "src": "M", "dst": "T", "capacity": 10},
            {"id": "S1-T", "src": "S1", "dst": "T", "capacity": 10},
            {"id": "S2-T", "src": "S2", "dst": "T", "capacity": 10},
        ],
        "agents": ["S1", "S2"],
        "ie_pairs": [
            {"id": "P1", "agent": "S1", "src": "S1", "dst": "T", "paths": [["S1-M", "M-T"], ["S1-T"]]},
            {"id": "P2", "agent": "S2", "src": "S2", "dst": "T", "paths": [["S2-M", "M-T"], ["S2-T"]]},
        ],
        "demand": {"P1": 5.0, "P2": 5.0},
    })


def random_topology(rng: np.random.Generator):
    """Random layered topology: each agent owns one pair with 2-4 two-hop paths via shared core nodes."""
    n_agents = int(rng.integers(1, 4))
    n_core = int(rng.integers(2, 5))
    nodes = [f"A{i}" for i in range(n_agents)] + [f"C{j}" for j in range(n_core)] + ["T"]
    links = []
    for j in range(n_core):
        links.append({"id": f"C{j}-T", "src": f"C{j}", "dst": "T", "capacity": float(rng.uniform(1, 50))})
    pairs, demand = [], {}
    for i in range(n_agents):
        k = int(rng.integers(2, n_core + 1))
        cores = rng.choice(n_core, size=k, replace=False)
        paths = []
        for j in cores:
            links.append({"id": f"A{i}-C{j}", "src": f"A{i}", "dst": f"C{j}",
                          "capacity": float(rng.uniform(1, 50))})
            paths.append([f"A{i}-C{j}", f"C{j}-T"])
        pairs.append({"id": f"P{i}", "agent": f"A{i}", "src": f"A{i}", "dst": "T", "paths": paths})
        demand[f"P{i}"] = float(rng.uniform(0, 40))
    return topology_from_dict({"name": "random", "nodes": nodes, "links": links,
                               "agents": [f"A{i}" for i in range(n_agents)],
                               "ie_pairs": pairs, "demand": demand})


def random_simplex_actions(topo, rng):
    out = []
    for groups in topo.agent_groups:
        out.append(np.concatenate([rng.dirichlet(np.ones(g)) for g in groups]))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _net_margin(net, cache):
    acts = cache[0]
    margin = np.inf
    for idx, layer in enumerate(net.layers):
        if layer.activation == "relu":
            z = acts[idx] @ layer.weight + layer.bias
            margin = min(margin, float(np.abs(z).min()))
    return margin


def relu_margin(model, *inputs):
    """Smallest |pre-activation| over every relu unit for these inputs.

    Central differences straddling a relu kink are not derivatives, so
    gradient checks should only use instances with a comfortable margin.
    """
    from attmaddpg.marl.networks import ActorNet, AttentionCritic, KHeadCritic, MlpCritic
    from attmaddpg.numcore import MlpNetwork

    _, cache = model.forward_cached(*inputs)
    if isinstance(model, MlpNetwork):
        return _net_margin(model, cache)
    if isinstance(model, (ActorNet,)):
        return _net_margin(model.net, cache)
    if isinstance(model, MlpCritic):
        return _net_margin(model.net, cache)
    if isinstance(model, KHeadCritic):
        c_heads, c_enc, _ = cache
    elif isinstance(model, AttentionCritic):
        _, c_heads, _, c_enc, _, _ = cache
    else:
        raise TypeError(type(model))
    return min(_net_margin(model.heads, c_heads), _net_margin(model.encoder, c_enc))
