"""Actor and critic networks.

All critics share one calling convention::

    q = critic.forward(obs_all, own_action, other_actions)

``obs_all`` is every agent's observation concatenated in agent order,
``own_action`` is the evaluating agent's action and ``other_actions`` the
teammates' actions concatenated in agent order (skipping the owner).  Inputs
are batches ``(B, dim)``; ``q`` has shape ``(B, 1)``.  ``backward`` returns
gradients for the three inputs in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..envs.base import ActionSpace
from ..numcore import ConfigurationError, GradientBundle, MlpNetwork, softmax

HEAD_DIM = 32
_TINY = np.finfo(np.float64).tiny


def attention(h: np.ndarray, heads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dot-score soft attention.

    ``h`` is ``(..., d)`` and ``heads`` is ``(K, ..., d)``.  Returns weights
    ``(..., K)`` with ``W_k = softmax_k(h . heads_k)`` and the context vector
    ``sum_k W_k heads_k`` of shape ``(..., d)``.
    """
    h = np.asarray(h, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64)
    if heads.shape[1:] != h.shape:
        raise ConfigurationError(f"head shape {heads.shape[1:]} does not match query {h.shape}")
    scores = np.moveaxis(np.sum(heads * h[None], axis=-1), 0, -1)
    weights = softmax(scores, axis=-1)
    # exp() of a score spread beyond ~745 underflows to 0.0; the exact weight
    # is positive, so store it as the smallest normal double instead
    np.maximum(weights, _TINY, out=weights)
    if not (np.all(weights > 0.0) and np.all(np.abs(weights.sum(axis=-1) - 1.0) <= 1e-9)):
        raise FloatingPointError(f"degenerate attention weights (score range {np.ptp(scores):.3g})")
    context = np.sum(np.moveaxis(weights, -1, 0)[..., None] * heads, axis=0)
    return weights, context


class _Composite:
    """Several MlpNetworks sharing one flat parameter vector."""

    def _pack(self, nets: Sequence[MlpNetwork]) -> None:
        self.n_params = sum(n.n_params for n in nets)
        self.params = np.zeros(self.n_params)
        self._slices = []
        offset = 0
        for net in nets:
            sl = slice(offset, offset + net.n_params)
            net.adopt_buffer(self.params[sl])
            self._slices.append(sl)
            offset += net.n_params

    def get_flat(self) -> np.ndarray:
        return self.params.copy()

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ConfigurationError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[...] = flat

    def _join(self, grads: Sequence[np.ndarray]) -> np.ndarray:
        out = np.empty(self.n_params)
        for sl, g in zip(self._slices, grads):
            out[sl] = g
        return out

    def gradient(self, *inputs, upstream) -> GradientBundle:
        _, cache = self.forward_cached(*inputs)
        return self.backward(cache, upstream)

    def forward(self, *inputs) -> np.ndarray:
        return self.forward_cached(*inputs)[0]

    __call__ = forward


class ActorNet(_Composite):
    """Deterministic policy ``o_i -> a_i`` whose output head matches the action space.

    Simplex actions use a (grouped) softmax output; box actions use
    ``center + half_width * tanh(.)``.
    """

    def __init__(self, obs_dim: int, space: ActionSpace, hidden: Sequence[int] = (64, 64),
                 rng: np.random.Generator | None = None):
        self.space = space
        sizes = [obs_dim, *hidden, space.dim]
        acts = ["relu"] * len(hidden)
        if space.kind == "simplex":
            acts.append("softmax")
            groups = space.groups if len(space.groups) > 1 else None
            self.net = MlpNetwork(sizes, acts, rng, softmax_groups=groups)
            self.center, self.half = 0.0, 1.0
        else:
            acts.append("tanh")
            self.net = MlpNetwork(sizes, acts, rng)
            self.center = 0.5 * (space.high + space.low)
            self.half = 0.5 * (space.high - space.low)
        self._pack([self.net])

    def forward_cached(self, obs: np.ndarray):
        out, cache = self.net.forward_cached(obs)
        if self.space.kind == "box":
            out = self.center + self.half * out
        return out, cache

    def backward(self, cache, upstream: np.ndarray) -> GradientBundle:
        upstream = np.asarray(upstream, dtype=np.float64)
        if self.space.kind == "box":
            upstream = upstream * self.half
        return self.net.backward(cache, upstream)


def _split_x(dx: np.ndarray, obs_width: int) -> tuple[np.ndarray, np.ndarray]:
    return dx[..., :obs_width], dx[..., obs_width:]


@dataclass
class CriticDiagnostics:
    weights: np.ndarray       # (B, K) attention weights; empty for attention-free critics
    head_vectors: np.ndarray  # (K, B, head_dim)
    head_values: np.ndarray   # (B, K) scalar Q of each head through the output layer


class AttentionCritic(_Composite):
    """K action-conditional heads, teammate-action encoder, dot-score attention, linear output.

    Heads see ``obs_all ⊕ own_action`` and each emit a ``head_dim`` vector.
    The encoder maps ``other_actions`` to a query ``h`` of the same width.
    Softmax over ``h . head_k`` weights the heads; the weighted mean goes
    through a single linear unit to give Q.
    """

    has_attention = True

    def __init__(self, obs_width: int, own_dim: int, others_dim: int, k: int = 4,
                 hidden: Sequence[int] = (64, 64), encoder_hidden: Sequence[int] = (64,),
                 head_dim: int = HEAD_DIM, rng: np.random.Generator | None = None):
        if k < 1:
            raise ConfigurationError("need at least one head")
        self.obs_width, self.own_dim, self.others_dim = obs_width, own_dim, others_dim
        self.k, self.head_dim = k, head_dim
        self.heads = MlpNetwork([obs_width + own_dim, *hidden, head_dim],
                                ["relu"] * len(hidden) + ["linear"], rng, stack=k)
        self.encoder = MlpNetwork([others_dim, *encoder_hidden, head_dim],
                                  ["relu"] * len(encoder_hidden) + ["linear"], rng)
        self.out = self._make_output(rng)
        self._pack([self.heads, self.encoder, self.out])

    def _make_output(self, rng):
        return MlpNetwork([self.head_dim, 1], ["linear"], rng)

    def _check(self, obs, own, others):
        obs, own, others = (np.asarray(x, dtype=np.float64) for x in (obs, own, others))
        if obs.shape[-1] != self.obs_width or own.shape[-1] != self.own_dim or others.shape[-1] != self.others_dim:
            raise ConfigurationError(
                f"critic expects widths ({self.obs_width}, {self.own_dim}, {self.others_dim}), "
                f"got ({obs.shape[-1]}, {own.shape[-1]}, {others.shape[-1]})"
            )
        return obs, own, others

    def _trunk(self, obs, own, others):
        obs, own, others = self._check(obs, own, others)
        x = np.concatenate([obs, own], axis=-1)
        heads, c_heads = self.heads.forward_cached(x)
        h, c_enc = self.encoder.forward_cached(others)
        return heads, c_heads, h, c_enc

    def forward_cached(self, obs, own, others):
        heads, c_heads, h, c_enc = self._trunk(obs, own, others)
        weights, context = attention(h, heads)
        q, c_out = self.out.forward_cached(context)
        return q, (heads, c_heads, h, c_enc, weights, c_out)

    def backward(self, cache, upstream) -> GradientBundle:
        heads, c_heads, h, c_enc, weights, c_out = cache
        g_out = self.out.backward(c_out, upstream)
        d_ctx = g_out.inputs[0]
        wk = np.moveaxis(weights, -1, 0)[..., None]                     # (K, ..., 1)
        d_w = np.moveaxis(np.sum(heads * d_ctx[None], axis=-1), 0, -1)  # (..., K)
        d_scores = weights * (d_w - np.sum(weights * d_w, axis=-1, keepdims=True))
        ds = np.moveaxis(d_scores, -1, 0)[..., None]
        d_heads = wk * d_ctx[None] + ds * h[None]
        d_h = np.sum(ds * heads, axis=0)
        g_heads = self.heads.backward(c_heads, d_heads)
        g_enc = self.encoder.backward(c_enc, d_h)
        d_obs, d_own = _split_x(g_heads.inputs[0], self.obs_width)
        return GradientBundle(self._join([g_heads.params, g_enc.params, g_out.params]),
                              (d_obs, d_own, g_enc.inputs[0]))

    def diagnostics(self, obs, own, others) -> CriticDiagnostics:
        heads, _, h, _ = self._trunk(obs, own, others)
        weights, _ = attention(h, heads)
        values = np.moveaxis(self.out.forward(heads)[..., 0], 0, -1)
        return CriticDiagnostics(weights, heads, values)


class KHeadCritic(AttentionCritic):
    """Attention-free ablation: head vectors and the teammate encoding are concatenated
    and fed to one linear unit."""

    has_attention = False

    def _make_output(self, rng):
        return MlpNetwork([self.head_dim * (self.k + 1), 1], ["linear"], rng)

    def forward_cached(self, obs, own, others):
        heads, c_heads, h, c_enc = self._trunk(obs, own, others)
        merged = np.concatenate([*heads, h], axis=-1)
        q, c_out = self.out.forward_cached(merged)
        return q, (c_heads, c_enc, c_out)

    def backward(self, cache, upstream) -> GradientBundle:
        c_heads, c_enc, c_out = cache
        g_out = self.out.backward(c_out, upstream)
        d = g_out.inputs[0]
        parts = np.split(d, self.k + 1, axis=-1)
        g_heads = self.heads.backward(c_heads, np.stack(parts[:-1]))
        g_enc = self.encoder.backward(c_enc, parts[-1])
        d_obs, d_own = _split_x(g_heads.inputs[0], self.obs_width)
        return GradientBundle(self._join([g_heads.params, g_enc.params, g_out.params]),
                              (d_obs, d_own, g_enc.inputs[0]))

    def diagnostics(self, obs, own, others) -> CriticDiagnostics:
        heads = self._trunk(obs, own, others)[0]
        batch = heads.shape[1:-1]
        return CriticDiagnostics(np.zeros(batch + (0,)), heads, np.zeros(batch + (0,)))


class MlpCritic(_Composite):
    """Plain MLP over ``o_1 ⊕ ... ⊕ o_N ⊕ a_1 ⊕ ... ⊕ a_N`` (actions in agent order)."""

    has_attention = False

    def __init__(self, obs_width: int, action_dims: Sequence[int], agent: int,
                 hidden: Sequence[int] = (64, 64), rng: np.random.Generator | None = None):
        self.obs_width = obs_width
        self.action_dims = list(action_dims)
        self.own_dim = self.action_dims[agent]
        self.others_dim = sum(self.action_dims) - self.own_dim
        self.own_offset = sum(self.action_dims[:agent])
        self.net = MlpNetwork([obs_width + sum(self.action_dims), *hidden, 1],
                              ["relu"] * len(hidden) + ["linear"], rng)
        self._pack([self.net])

    def forward_cached(self, obs, own, others):
        obs, own, others = (np.asarray(x, dtype=np.float64) for x in (obs, own, others))
        if obs.shape[-1] != self.obs_width or own.shape[-1] != self.own_dim or others.shape[-1] != self.others_dim:
            raise ConfigurationError("critic input widths do not match construction")
        x = np.concatenate([obs, others[..., :self.own_offset], own, others[..., self.own_offset:]], axis=-1)
        return self.net.forward_cached(x)

    def backward(self, cache, upstream) -> GradientBundle:
        g = self.net.backward(cache, upstream)
        dx = g.inputs[0]
        d_obs = dx[..., :self.obs_width]
        d_act = dx[..., self.obs_width:]
        lo, hi = self.own_offset, self.own_offset + self.own_dim
        d_others = np.concatenate([d_act[..., :lo], d_act[..., hi:]], axis=-1)
        return GradientBundle(g.params, (d_obs, d_act[..., lo:hi], d_others))


def build_critic(algorithm: str, obs_width: int, action_dims: Sequence[int], agent: int, k: int = 4,
                 hidden: Sequence[int] = (64, 64), encoder_hidden: Sequence[int] = (64,),
                 head_dim: int = HEAD_DIM, rng: np.random.Generator | None = None):
    own = action_dims[agent]
    others = sum(action_dims) - own
    if algorithm == "att-maddpg":
        return AttentionCritic(obs_width, own, others, k, hidden, encoder_hidden, head_dim, rng)
    if algorithm == "khead-ablation":
        return KHeadCritic(obs_width, own, others, k, hidden, encoder_hidden, head_dim, rng)
    if algorithm in ("maddpg", "ddpg-single"):
        return MlpCritic(obs_width, action_dims, agent, hidden, rng)
    raise ConfigurationError(f"no critic for algorithm {algorithm!r}")
