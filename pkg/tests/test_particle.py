import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attmaddpg.envs.particle import (
    ParticleConfig, ParticleEnv, WorldState, build_particle_observation, coop_nav_reward,
    particle_step, predator_reward, prey_velocity,
)


def _state(agents, others, size=10.0):
    agents = np.asarray(agents, dtype=float)
    others = np.asarray(others, dtype=float)
    return WorldState(agents, np.zeros_like(agents), others, np.zeros_like(others), size)


def _random_state(rng, n_agents=3, n_others=3):
    return WorldState(rng.uniform(0, 10, (n_agents, 2)), rng.uniform(-1, 1, (n_agents, 2)),
                      rng.uniform(0, 10, (n_others, 2)), np.zeros((n_others, 2)))


def test_zero_action_keeps_position():
    cfg = ParticleConfig()
    s = _state([[1, 1], [2, 2], [3, 3]], [[5, 5]] * 3)
    np.testing.assert_array_equal(particle_step(s, np.zeros((3, 2)), cfg).agent_pos, s.agent_pos)


def test_kinematics_and_clamping():
    cfg = ParticleConfig()
    s = _state([[1, 1], [2, 2], [3, 3]], [[5, 5]] * 3)
    new = particle_step(s, [[0.5, 0], [2.0, 0], [0, 0]], cfg)
    assert new.agent_pos[0, 0] == pytest.approx(1.05)
    disp = np.linalg.norm(new.agent_pos[1] - s.agent_pos[1])
    assert disp == pytest.approx(cfg.max_speed * cfg.dt)


def test_positions_stay_on_plane():
    cfg = ParticleConfig()
    s = _state([[0.01, 9.99], [5, 5], [5, 5]], [[5, 5]] * 3)
    new = particle_step(s, [[-1, 1], [0, 0], [0, 0]], cfg)
    assert np.all(new.agent_pos >= 0) and np.all(new.agent_pos <= 10)


def test_coop_nav_examples():
    assert coop_nav_reward(_state([[1, 1], [2, 2], [3, 3]], [[1, 1], [2, 2], [3, 3]])) == 0.0
    r = coop_nav_reward(_state([[1, 1], [2, 2], [3, 3]], [[1, 1], [2, 2], [3, 7]]))
    assert r == pytest.approx(-4.0)


def test_coop_nav_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = _random_state(rng)
        expect = 0.0
        for lm in s.other_pos:
            expect -= min(np.hypot(*(ag - lm)) for ag in s.agent_pos)
        assert coop_nav_reward(s) == pytest.approx(expect, abs=1e-12)


def test_predator_examples():
    assert predator_reward(_state([[5, 5], [1, 1], [2, 2]], [[5, 5]])) == 10.0
    assert predator_reward(_state([[5, 2], [9, 9], [1, 9]], [[5, 5]])) == pytest.approx(-3.0)


def test_predator_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = _random_state(rng, n_others=1)
        d = min(np.hypot(*(p - s.other_pos[0])) for p in s.agent_pos)
        assert predator_reward(s) == pytest.approx(-d + (10.0 if d < 0.3 else 0.0), abs=1e-12)


def test_prey_flees_nearest_predator():
    s = _state([[4, 5], [0, 0], [9, 9]], [[5, 5]])
    np.testing.assert_allclose(prey_velocity(s, 1.0), [1.0, 0.0])


def test_observation_layout():
    s = _state([[1, 1], [1, 1], [4, 4]], [[2, 3], [1, 1], [0, 0]])
    o = build_particle_observation(0, s)
    assert o.shape == (4 + 4 * 5,)
    np.testing.assert_array_equal(o[4:6], [0, 0])  # coincident teammate
    np.testing.assert_array_equal(o[12:14], [1, 2])  # first landmark relative position
    assert ParticleEnv().spec.obs_dims == (24,) * 3
    assert ParticleEnv(task="predator_prey", n_landmarks=1).spec.obs_dims == (16,) * 3


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_translation_invariance(seed, dx, dy):
    s = _random_state(np.random.default_rng(seed))
    t = s.shifted(np.array([dx, dy]))
    assert coop_nav_reward(t) == pytest.approx(coop_nav_reward(s), abs=1e-9)
    for i in range(3):
        np.testing.assert_allclose(build_particle_observation(i, t)[4:], build_particle_observation(i, s)[4:],
                                   atol=1e-9)
    p = WorldState(s.agent_pos, s.agent_vel, s.other_pos[:1], s.other_vel[:1])
    q = p.shifted(np.array([dx, dy]))
    assert predator_reward(q) == pytest.approx(predator_reward(p), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reward_bounds(seed):
    s = _random_state(np.random.default_rng(seed))
    assert coop_nav_reward(s) <= 0.0
    assert predator_reward(WorldState(s.agent_pos, s.agent_vel, s.other_pos[:1], s.other_vel[:1])) <= 10.0


def test_landmarks_do_not_move():
    env = ParticleEnv()
    env.reset(3)
    before = env.state.other_pos.copy()
    env.step([np.ones(2)] * 3)
    np.testing.assert_array_equal(env.state.other_pos, before)
    np.testing.assert_array_equal(env.state.other_vel, 0.0)


def test_capture_termination_flag():
    env = ParticleEnv(task="predator_prey", n_landmarks=1, terminate_on_capture=True)
    env.reset(0)
    env.state.agent_pos[0] = env.state.other_pos[0]
    res = env.step([np.zeros(2)] * 3)
    assert res.terminal and res.info["captured"]
    assert res.rewards[0] > 9.0


def test_config_validation():
    with pytest.raises(ValueError):
        ParticleConfig(task="tag")
    with pytest.raises(ValueError):
        ParticleConfig(collision_radius=0)
