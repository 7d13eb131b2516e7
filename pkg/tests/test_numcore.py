import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attmaddpg.numcore import (
    Adam,
    ConfigurationError,
    MlpNetwork,
    finite_diff_check,
    load_network,
    save_network,
    softmax,
)


def test_identity_linear_layer():
    net = MlpNetwork([2, 2], ["linear"])
    net.layers[0].weight[...] = np.eye(2)
    np.testing.assert_array_equal(net.forward(np.array([1.0, 2.0])), [1.0, 2.0])


def test_relu_layer_clips_negative():
    net = MlpNetwork([2, 2], ["relu"])
    net.layers[0].weight[...] = np.eye(2)
    np.testing.assert_array_equal(net.forward(np.array([-1.0, 3.0])), [0.0, 3.0])


def test_two_layer_hand_evaluation():
    net = MlpNetwork([1, 2, 1], ["relu", "linear"])
    net.layers[0].weight[...] = [[1.0, -2.0]]
    net.layers[0].bias[...] = [0.5, 0.5]
    net.layers[1].weight[...] = [[3.0], [4.0]]
    net.layers[1].bias[...] = [1.0]
    # hidden = relu([1.5, -1.5]) = [1.5, 0]; out = 3*1.5 + 4*0 + 1
    assert net.forward(np.array([1.0]))[0] == pytest.approx(5.5, abs=0)


def test_dimension_mismatch_raises():
    net = MlpNetwork([3, 4, 1], ["relu", "linear"], np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        net.forward(np.zeros(2))
    out, cache = net.forward_cached(np.zeros((5, 3)))
    with pytest.raises(ConfigurationError):
        net.backward(cache, np.zeros((5, 2)))


def test_linear_layer_gradients():
    net = MlpNetwork([3, 1], ["linear"], np.random.default_rng(1))
    x = np.array([0.5, -1.0, 2.0])
    g = net.gradient(x, np.array([1.0]))
    w_grad = g.params[net.layers[0].w_slice].reshape(3, 1)
    b_grad = g.params[net.layers[0].b_slice]
    np.testing.assert_array_equal(b_grad, [1.0])
    np.testing.assert_array_equal(w_grad[:, 0], x)
    np.testing.assert_array_equal(g.inputs[0], net.layers[0].weight[:, 0])


def test_relu_negative_preactivation_blocks_gradient():
    net = MlpNetwork([1, 1], ["relu"])
    net.layers[0].weight[...] = [[1.0]]
    g = net.gradient(np.array([-2.0]), np.array([1.0]))
    np.testing.assert_array_equal(g.params, 0.0)
    np.testing.assert_array_equal(g.inputs[0], 0.0)


def test_random_two_layer_matches_finite_differences():
    rng = np.random.default_rng(3)
    net = MlpNetwork([4, 6, 3], ["tanh", "linear"], rng)
    assert finite_diff_check(net, rng.standard_normal((5, 4))) < 1e-4


@pytest.mark.parametrize("acts,bound", [
    (["linear"], 1e-9),
    (["tanh", "tanh"], 1e-4),
    (["relu", "softmax"], 1e-4),
])
def test_finite_diff_check_by_activation(acts, bound):
    rng = np.random.default_rng(11)
    sizes = [3] + [4] * len(acts)
    net = MlpNetwork(sizes, acts, rng)
    net.params += 0.1 * rng.standard_normal(net.n_params)
    assert finite_diff_check(net, rng.standard_normal((6, 3)), rng=rng) < bound


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    hidden=st.lists(st.sampled_from(["relu", "tanh", "linear"]), min_size=0, max_size=2),
    out_act=st.sampled_from(["linear", "relu", "tanh", "softmax"]),
    stack=st.sampled_from([None, 1, 3]),
)
def test_backward_matches_finite_differences(seed, hidden, out_act, stack):
    rng = np.random.default_rng(seed)
    acts = hidden + [out_act]
    sizes = [int(rng.integers(1, 5)) for _ in range(len(acts))] + [int(rng.integers(2, 5))]
    net = MlpNetwork(sizes, acts, rng, stack=stack)
    net.params += 0.1 * rng.standard_normal(net.n_params)
    x = rng.standard_normal((int(rng.integers(1, 4)), sizes[0]))
    assert finite_diff_check(net, x, rng=rng) < 1e-4


def test_grouped_softmax_gradient():
    rng = np.random.default_rng(5)
    net = MlpNetwork([3, 8, 5], ["relu", "softmax"], rng, softmax_groups=(2, 3))
    x = rng.standard_normal((4, 3))
    out = net.forward(x)
    np.testing.assert_allclose(out[:, :2].sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(out[:, 2:].sum(axis=1), 1.0, atol=1e-12)
    assert finite_diff_check(net, x, rng=rng) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_softmax_is_probability_vector(z):
    s = softmax(np.array(z))
    assert np.all(s >= 0) and np.all(s <= 1)
    assert abs(s.sum() - 1.0) < 1e-9


def test_softmax_output_layer_is_probability_vector():
    rng = np.random.default_rng(2)
    net = MlpNetwork([4, 5], ["softmax"], rng)
    out = net.forward(rng.standard_normal((100, 4)))
    assert np.all(out > 0) and np.all(out < 1)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_stacked_network_matches_independent_copies():
    rng = np.random.default_rng(4)
    stacked = MlpNetwork([3, 5, 2], ["relu", "linear"], rng, stack=3)
    x = rng.standard_normal((7, 3))
    out = stacked.forward(x)
    assert out.shape == (3, 7, 2)
    for k in range(3):
        single = MlpNetwork([3, 5, 2], ["relu", "linear"])
        for ls, lk in zip(single.layers, stacked.layers):
            ls.weight[...] = lk.weight[k]
            ls.bias[...] = lk.bias[k, 0]
        np.testing.assert_allclose(single.forward(x), out[k], rtol=0, atol=1e-14)


def test_flat_roundtrip_is_bit_exact():
    rng = np.random.default_rng(8)
    net = MlpNetwork([3, 4, 2], ["relu", "tanh"], rng)
    flat = net.get_flat()
    other = MlpNetwork([3, 4, 2], ["relu", "tanh"], np.random.default_rng(9))
    other.set_flat(flat)
    assert other.get_flat().tobytes() == flat.tobytes()
    x = rng.standard_normal((2, 3))
    assert other.forward(x).tobytes() == net.forward(x).tobytes()


def test_same_seed_bit_identical():
    a = MlpNetwork([3, 4, 2], ["relu", "softmax"], np.random.default_rng(42))
    b = MlpNetwork([3, 4, 2], ["relu", "softmax"], np.random.default_rng(42))
    x = np.linspace(-1, 1, 6).reshape(2, 3)
    assert a.forward(x).tobytes() == b.forward(x).tobytes()


def test_adam_zero_gradient_is_noop():
    params = np.array([1.0, -2.0, 3.0])
    opt = Adam(3, lr=0.1)
    opt.step(params, np.zeros(3))
    np.testing.assert_array_equal(params, [1.0, -2.0, 3.0])


def test_adam_first_step_hand_computed():
    # beta1 = beta2 = 0: m = g, v = g^2, no bias correction -> step lr * g / (|g| + eps)
    params = np.array([0.0])
    opt = Adam(1, lr=0.1, beta1=0.0, beta2=0.0, eps=1e-8)
    opt.step(params, np.array([1.0]))
    assert params[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-15)


def test_adam_default_bias_correction():
    # with defaults the first step is lr * sign(g) up to eps
    params = np.array([1.0, 1.0])
    opt = Adam(2, lr=1e-3)
    opt.step(params, np.array([4.0, -0.5]))
    np.testing.assert_allclose(params, [1.0 - 1e-3, 1.0 + 1e-3], rtol=1e-10)


def test_adam_deterministic():
    def run():
        p = np.array([0.3, -0.7])
        opt = Adam(2, lr=0.05)
        for g in ([1.0, 2.0], [0.5, -1.0], [0.1, 0.1]):
            opt.step(p, np.array(g))
        return p
    assert run().tobytes() == run().tobytes()


def test_adam_rejects_nan():
    opt = Adam(2)
    with pytest.raises(FloatingPointError, match="non-finite"):
        opt.step(np.zeros(2), np.array([0.0, np.nan]))


def test_adam_state_roundtrip():
    p = np.array([0.3, -0.7])
    opt = Adam(2, lr=0.05)
    opt.step(p, np.array([1.0, 2.0]))
    clone = Adam(2)
    clone.load_state_dict(opt.state_dict())
    q = p.copy()
    opt.step(p, np.array([0.5, 0.5]))
    clone.step(q, np.array([0.5, 0.5]))
    assert p.tobytes() == q.tobytes()


def test_network_checkpoint_roundtrip(tmp_path):
    net = MlpNetwork([3, 4, 2], ["relu", "softmax"], np.random.default_rng(1), stack=2)
    path = tmp_path / "net.npz"
    save_network(path, net)
    loaded = load_network(path)
    assert loaded.describe() == net.describe()
    assert loaded.get_flat().tobytes() == net.get_flat().tobytes()
