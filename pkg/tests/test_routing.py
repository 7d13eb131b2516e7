import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attmaddpg.envs.routing import (
    FlowTrace, OracleBudgetError, RoutingEnv, TopologyError, compute_utilizations,
    grid_search_oracle, load_topology, load_trace, mlu_reward, scale_trace, simplex_grid,
    static_trace, synthetic_trace, topology_from_dict, wcmp_policy,
)
from conftest import random_simplex_actions, random_topology, shared_link_topology, two_path_topology


# -- fixtures ----------------------------------------------------------

def test_simple_fixture_shape():
    topo = load_topology("simple")
    assert topo.n_agents == 2
    assert [len(p.paths) for p in topo.ie_pairs] == [2, 2]


def test_complex_fixture_shape():
    simple, cplx = load_topology("simple"), load_topology("complex")
    assert cplx.n_agents == 4
    assert cplx.n_paths == 4 * simple.n_paths
    # R4 shares links with R1 and R2 but not with R3
    links = [set(l) for l in cplx.agent_links]
    assert links[3] & links[0] and links[3] & links[1] and not links[3] & links[2]


def test_unknown_link_rejected():
    data = load_topology("simple").to_dict()
    data["ie_pairs"][0]["paths"][0] = ["B-Z"]
    with pytest.raises(TopologyError, match="B-Z"):
        topology_from_dict(data)


def test_disconnected_path_rejected():
    data = load_topology("simple").to_dict()
    data["ie_pairs"][0]["paths"][1] = ["B-E", "F-D"]
    with pytest.raises(TopologyError, match="disconnected"):
        topology_from_dict(data)


def test_single_path_agent_rejected():
    data = load_topology("simple").to_dict()
    data["ie_pairs"][1]["paths"] = [["E-D"]]
    with pytest.raises(TopologyError, match="2 paths"):
        topology_from_dict(data)


def test_topology_file_round_trip(tmp_path):
    topo = load_topology("complex")
    path = tmp_path / "t.json"
    path.write_text(json.dumps(topo.to_dict()))
    again = load_topology(path)
    assert again.to_dict() == topo.to_dict()


def test_topology_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(TopologyError, match="parse error"):
        load_topology(path)


def test_trace_round_trip(tmp_path):
    topo = load_topology("simple")
    trace = synthetic_trace(topo, 30, seed=4)
    trace.to_csv(tmp_path / "tr.csv")
    again = load_trace(tmp_path / "tr.csv")
    assert again.pair_ids == trace.pair_ids
    np.testing.assert_array_equal(again.demands, trace.demands)


def test_trace_rejects_negative(tmp_path):
    (tmp_path / "neg.csv").write_text("B>D,E>D\n1,-2\n")
    with pytest.raises(TopologyError):
        load_trace(tmp_path / "neg.csv")


def test_scale_trace_peak():
    topo = load_topology("simple")
    scaled = scale_trace(synthetic_trace(topo, 100, seed=1), topo, 0.8)
    peak = scaled.aligned(topo).sum(axis=1).max()
    assert peak == pytest.approx(0.8 * topo.pair_capacity.sum())


# -- utilizations and reward ---------------------------------------------

def test_utilization_zero_demand():
    topo = load_topology("simple")
    u = compute_utilizations(topo, wcmp_policy(topo), np.zeros(2))
    np.testing.assert_array_equal(u, 0.0)


def test_utilization_two_disjoint_paths():
    topo = two_path_topology()
    u = compute_utilizations(topo, [np.array([0.6, 0.4])], np.array([10.0]))
    np.testing.assert_allclose(u, [0.6, 0.4], atol=1e-12)


def test_utilization_shared_link():
    topo = shared_link_topology()
    u = compute_utilizations(topo, [np.array([1.0, 0.0]), np.array([1.0, 0.0])], np.array([5.0, 5.0]))
    assert u[topo.link_index["M-T"]] == pytest.approx(1.0)


def test_mlu_reward_examples():
    topo = two_path_topology()
    np.testing.assert_array_equal(mlu_reward(topo, np.zeros(2)), [1.0])
    np.testing.assert_allclose(mlu_reward(topo, np.array([0.6, 0.4])), [0.4])
    np.testing.assert_allclose(mlu_reward(topo, np.array([1.5, 0.2])), [-0.5])


def test_exploration_bonus_uses_direct_links():
    topo = load_topology("simple")
    u = np.zeros(len(topo.links))
    u[topo.link_index["E-F"]] = 0.4
    u[topo.link_index["F-D"]] = 0.5
    r = mlu_reward(topo, u, bonus=0.2)
    # B's outgoing links carry nothing; E's busiest outgoing link is E-F
    np.testing.assert_allclose(r, [0.5 + 0.2, 0.5 + 0.2 * 0.6])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_flow_conservation(seed):
    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    actions = random_simplex_actions(topo, rng)
    demands = topo.static_demand()
    from attmaddpg.envs.routing import _path_ratios
    y = _path_ratios(topo, actions)
    carried = np.bincount(topo.path_pair_arr, weights=demands[topo.path_pair_arr] * y)
    np.testing.assert_allclose(carried, demands, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    actions = random_simplex_actions(topo, rng)
    data = topo.to_dict()
    for l in data["links"]:
        l["capacity"] *= c
    scaled = topology_from_dict(data)
    u1 = compute_utilizations(topo, actions, topo.static_demand())
    u2 = compute_utilizations(scaled, actions, topo.static_demand() * c)
    np.testing.assert_allclose(u1, u2, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(mlu_reward(topo, u1), mlu_reward(scaled, u2), rtol=1e-9, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 20.0))
def test_demand_monotonicity(seed, extra):
    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    actions = random_simplex_actions(topo, rng)
    d = topo.static_demand()
    bumped = d.copy()
    bumped[int(rng.integers(len(d)))] += extra
    assert compute_utilizations(topo, actions, bumped).max() >= compute_utilizations(topo, actions, d).max()


# -- WCMP and oracle --------------------------------------------------------

def test_wcmp_examples():
    np.testing.assert_allclose(wcmp_policy(two_path_topology(10, 10))[0], [0.5, 0.5])
    np.testing.assert_allclose(wcmp_policy(two_path_topology(10, 30))[0], [0.25, 0.75])


def test_wcmp_single_path_pair():
    data = two_path_topology().to_dict()
    data["ie_pairs"].append({"id": "S>T2", "agent": "S", "src": "S", "dst": "T", "paths": [["a"]]})
    topo = topology_from_dict(data)
    np.testing.assert_allclose(wcmp_policy(topo)[0], [0.5, 0.5, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wcmp_is_simplex(seed):
    topo = random_topology(np.random.default_rng(seed))
    for a, groups in zip(wcmp_policy(topo), topo.agent_groups):
        start = 0
        for g in groups:
            seg = a[start:start + g]
            assert np.all(seg >= 0) and abs(seg.sum() - 1.0) <= 1e-9
            start += g


def test_simplex_grid():
    g = simplex_grid(3, 4)
    assert len(g) == 15
    np.testing.assert_allclose(g.sum(axis=1), 1.0)


def test_oracle_symmetric():
    actions, mlu = grid_search_oracle(two_path_topology(), [10.0], 20)
    np.testing.assert_allclose(actions[0], [0.5, 0.5])
    assert mlu == pytest.approx(0.5)


@pytest.mark.parametrize("name", ["simple", "complex"])
def test_oracle_beats_wcmp(name):
    topo = load_topology(name)
    d = topo.static_demand()
    _, best = grid_search_oracle(topo, d, 20 if name == "simple" else 4)
    wcmp = compute_utilizations(topo, wcmp_policy(topo), d).max()
    assert best <= wcmp + 1e-12


def test_oracle_refinement_monotone():
    topo = load_topology("simple")
    d = topo.static_demand()
    assert grid_search_oracle(topo, d, 20)[1] <= grid_search_oracle(topo, d, 10)[1] + 1e-12


def test_oracle_result_is_consistent():
    topo = load_topology("simple")
    actions, mlu = grid_search_oracle(topo, topo.static_demand(), 20)
    assert compute_utilizations(topo, actions, topo.static_demand()).max() == pytest.approx(mlu)


def test_oracle_budget():
    with pytest.raises(OracleBudgetError, match="coarser"):
        grid_search_oracle(load_topology("complex"), load_topology("complex").static_demand(), 20)


# -- environment -------------------------------------------------------------

def test_reset_observation():
    topo = load_topology("simple")
    trace = FlowTrace(["B>D", "E>D"], np.array([[6.0, 3.0]] * 5))
    env = RoutingEnv(topo, trace, horizon=3)
    obs = env.reset(0)
    for i, o in enumerate(obs):
        pair = topo.agent_pairs[i][0]
        assert o.shape == (1 + 2 + len(topo.agent_links[i]),)
        assert o[0] == pytest.approx(trace.demands[0, pair] / topo.pair_capacity[pair])
        np.testing.assert_allclose(o[1:3], [0.5, 0.5])
        np.testing.assert_array_equal(o[3:], 0.0)


def test_observation_carries_last_utilization():
    topo = load_topology("simple")
    env = RoutingEnv(topo, horizon=4)
    env.reset(0)
    acts = [np.array([0.3, 0.7]), np.array([0.9, 0.1])]
    res = env.step(acts)
    u = compute_utilizations(topo, acts, topo.static_demand())
    for i, o in enumerate(res.observations):
        np.testing.assert_array_equal(o[3:], u[topo.agent_links[i]])
        np.testing.assert_array_equal(o[1:3], acts[i])
    np.testing.assert_array_equal(res.rewards, 1.0 - u.max())


def test_env_rejects_invalid_split():
    env = RoutingEnv(load_topology("simple"))
    env.reset(0)
    from attmaddpg.envs.base import ContractViolation
    with pytest.raises(ContractViolation):
        env.step([np.array([0.7, 0.7]), np.array([0.5, 0.5])])


def test_env_reward_is_one_minus_mlu_every_step():
    topo = load_topology("complex")
    env = RoutingEnv(topo, synthetic_trace(topo, 100, seed=2), horizon=20)
    env.reset(5)
    rng = np.random.default_rng(0)
    for _ in range(20):
        res = env.step(random_simplex_actions(topo, rng))
        assert np.all(res.rewards == 1.0 - res.info["utilization"].max())
