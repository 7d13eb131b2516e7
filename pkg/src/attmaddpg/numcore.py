"""Dense feed-forward networks with hand-written backprop, Adam, and a gradient checker.

Every network keeps all of its parameters in one contiguous float64 vector;
weight matrices and biases are reshaped *views* into it.  That makes target
copies, soft updates and optimizer steps plain vector operations.

A network may be "stacked": ``stack=K`` builds K independent copies of the
same architecture whose weights have a leading axis of size K.  Feeding a
``(B, in)`` batch to a stacked network yields ``(K, B, out)``.  The attention
critic uses this for its K Q-value heads so that all heads run in a single
matmul per layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("linear", "relu", "tanh", "softmax")
CHECKPOINT_FORMAT = "attmaddpg-mlp"
CHECKPOINT_VERSION = 1


class ConfigurationError(ValueError):
    """Raised on dimension or structural mismatches."""


@dataclass
class GradientBundle:
    """Gradient of ``sum(upstream * output)`` w.r.t. parameters and inputs."""

    params: np.ndarray
    inputs: tuple[np.ndarray, ...] = ()


@dataclass
class Layer:
    in_dim: int
    out_dim: int
    activation: str
    groups: tuple[int, ...] | None = None
    # views into the owning network's flat vector
    weight: np.ndarray = field(default=None, repr=False)
    bias: np.ndarray = field(default=None, repr=False)
    w_slice: slice = field(default=None, repr=False)
    b_slice: slice = field(default=None, repr=False)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def _grouped(fn, z: np.ndarray, groups: tuple[int, ...] | None) -> np.ndarray:
    if groups is None:
        return fn(z)
    out = np.empty_like(z)
    start = 0
    for g in groups:
        out[..., start:start + g] = fn(z[..., start:start + g])
        start += g
    return out


def _softmax_backward(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    return s * (g - np.sum(g * s, axis=-1, keepdims=True))


class MlpNetwork:
    """Fully connected network ``x -> act_n(... act_1(x W_1 + b_1) ...)``.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``[4, 64, 64, 2]``.
    activations : sequence of str
        One tag per layer, from ``linear``, ``relu``, ``tanh``, ``softmax``.
    rng : numpy Generator, optional
        Source for Xavier-uniform initialization.  Biases start at zero.
        When omitted all parameters are zero.
    stack : int, optional
        Number of independent stacked copies.
    softmax_groups : tuple of int, optional
        For a softmax output layer, apply softmax independently over
        contiguous groups of these sizes instead of the whole vector.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator | None = None,
        stack: int | None = None,
        softmax_groups: Sequence[int] | None = None,
    ):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise ConfigurationError(
                f"need len(activations) == len(sizes) - 1, got {len(activations)} and {len(sizes)}"
            )
        if any(s < 0 for s in sizes) or any(s == 0 for s in sizes[1:]):
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        if stack is not None and stack < 1:
            raise ConfigurationError("stack must be >= 1")
        if softmax_groups is not None:
            softmax_groups = tuple(int(g) for g in softmax_groups)
            if sum(softmax_groups) != sizes[-1] or activations[-1] != "softmax":
                raise ConfigurationError("softmax_groups must partition a softmax output layer")

        self.sizes = sizes
        self.activations = list(activations)
        self.stack = stack
        self.softmax_groups = softmax_groups
        lead = () if stack is None else (stack,)

        self.layers: list[Layer] = []
        offset = 0
        for i, act in enumerate(self.activations):
            n_in, n_out = sizes[i], sizes[i + 1]
            w_n = int(np.prod(lead, dtype=int)) * n_in * n_out
            b_n = int(np.prod(lead, dtype=int)) * n_out
            w_slice = slice(offset, offset + w_n)
            b_slice = slice(offset + w_n, offset + w_n + b_n)
            offset += w_n + b_n
            groups = softmax_groups if i == len(self.activations) - 1 else None
            self.layers.append(Layer(n_in, n_out, act, groups, w_slice=w_slice, b_slice=b_slice))
        self.n_params = offset
        self.params = np.zeros(offset, dtype=np.float64)
        self._bind_views()

        if rng is not None:
            for layer in self.layers:
                limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
                layer.weight[...] = rng.uniform(-limit, limit, size=layer.weight.shape)

    def _bind_views(self) -> None:
        lead = () if self.stack is None else (self.stack,)
        for layer in self.layers:
            layer.weight = self.params[layer.w_slice].reshape(*lead, layer.in_dim, layer.out_dim)
            bshape = (layer.out_dim,) if self.stack is None else (self.stack, 1, layer.out_dim)
            layer.bias = self.params[layer.b_slice].reshape(bshape)

    def adopt_buffer(self, view: np.ndarray) -> None:
        """Move parameters into ``view`` (a slice of a larger flat vector) and rebind."""
        if view.shape != self.params.shape:
            raise ConfigurationError(f"buffer of shape {view.shape} cannot hold {self.n_params} parameters")
        view[...] = self.params
        self.params = view
        self._bind_views()

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def get_flat(self) -> np.ndarray:
        return self.params.copy()

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ConfigurationError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[...] = flat

    def describe(self) -> dict:
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "stack": self.stack,
            "softmax_groups": list(self.softmax_groups) if self.softmax_groups else None,
        }

    def clone(self) -> "MlpNetwork":
        net = MlpNetwork(self.sizes, self.activations, None, self.stack, self.softmax_groups)
        net.set_flat(self.params)
        return net

    # ------------------------------------------------------------------
    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, tuple[list[np.ndarray], bool]]:
        """Forward pass returning ``(output, cache)``; ``cache`` feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0 or x.shape[-1] != self.in_dim:
            raise ConfigurationError(
                f"input last dimension {x.shape[-1] if x.ndim else 0} != network input {self.in_dim}"
            )
        single = x.ndim == 1
        a = x[None, :] if single else x
        acts = [a]
        for layer in self.layers:
            z = a @ layer.weight + layer.bias
            if layer.activation == "relu":
                a = np.maximum(z, 0.0)
            elif layer.activation == "tanh":
                a = np.tanh(z)
            elif layer.activation == "softmax":
                a = _grouped(softmax, z, layer.groups)
            else:
                a = z
            acts.append(a)
        out = a[..., 0, :] if single else a
        return out, (acts, single)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    __call__ = forward

    def backward(self, cache, upstream: np.ndarray) -> GradientBundle:
        """Backpropagate ``upstream`` (shaped like the output) through a cached pass."""
        acts, single = cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if single:
            upstream = upstream[..., None, :]
        if upstream.shape != acts[-1].shape:
            raise ConfigurationError(f"upstream shape {upstream.shape} != output shape {acts[-1].shape}")
        grad = np.empty_like(self.params)
        delta = upstream
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            out = acts[idx + 1]
            if layer.activation == "relu":
                delta = delta * (out > 0.0)
            elif layer.activation == "tanh":
                delta = delta * (1.0 - out * out)
            elif layer.activation == "softmax":
                if layer.groups is None:
                    delta = _softmax_backward(out, delta)
                else:
                    d = np.empty_like(delta)
                    start = 0
                    for g in layer.groups:
                        sl = slice(start, start + g)
                        d[..., sl] = _softmax_backward(out[..., sl], delta[..., sl])
                        start += g
                    delta = d
            prev = acts[idx]
            grad[layer.w_slice] = (prev.swapaxes(-1, -2) @ delta).reshape(-1)
            grad[layer.b_slice] = delta.sum(axis=-2).reshape(-1)
            delta = delta @ layer.weight.swapaxes(-1, -2)
        # stacked copies sharing one input: sum their input gradients
        while delta.ndim > acts[0].ndim:
            delta = delta.sum(axis=0)
        if single:
            delta = delta[0]
        return GradientBundle(params=grad, inputs=(delta,))

    def gradient(self, x: np.ndarray, upstream: np.ndarray) -> GradientBundle:
        _, acts = self.forward_cached(x)
        return self.backward(acts, upstream)


class Adam:
    """Adam optimizer acting in place on a flat parameter vector."""

    def __init__(self, size: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != self.m.shape or grads.shape != self.m.shape:
            raise ConfigurationError(
                f"Adam state has {self.m.size} entries, got params {params.shape} grads {grads.shape}"
            )
        # a non-finite entry makes the sum non-finite (the converse only on overflow, checked below)
        with np.errstate(over="ignore", invalid="ignore"):
            total = float(np.add.reduce(grads))
        if not math.isfinite(total) and not np.all(np.isfinite(grads)):
            bad = np.flatnonzero(~np.isfinite(grads))
            raise FloatingPointError(
                f"non-finite gradient at {bad.size} of {grads.size} entries (first index {bad[0]})"
            )
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grads
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * np.square(grads)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        denom = np.sqrt(self.v / (1.0 - self.beta2 ** self.t))
        denom += self.eps
        m_hat /= denom
        m_hat *= self.lr
        params -= m_hat
        return params

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m.copy(), "v": self.v.copy(),
                "hyper": [self.lr, self.beta1, self.beta2, self.eps]}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
        self.lr, self.beta1, self.beta2, self.eps = (float(h) for h in state["hyper"])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def finite_diff_check(net, *inputs, upstream: np.ndarray | None = None, h: float = 1e-5,
                      rng: np.random.Generator | None = None, check_inputs: bool = True) -> float:
    """Max relative error between ``net``'s analytic gradients and central differences.

    ``net`` needs ``get_flat``/``set_flat``, ``forward(*inputs)`` and
    ``gradient(*inputs, upstream=...)``.  The probe objective is
    ``sum(upstream * forward(*inputs))``; a random upstream is drawn when none
    is given (an all-ones probe would be blind behind a softmax).
    """
    inputs = tuple(np.array(x, dtype=np.float64) for x in inputs)
    out = net.forward(*inputs)
    if upstream is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        upstream = rng.standard_normal(np.shape(out))
    bundle = net.gradient(*inputs, upstream=upstream)

    def objective() -> float:
        return float(np.sum(upstream * net.forward(*inputs)))

    theta = net.get_flat()
    numeric = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + h
        net.set_flat(theta)
        f_plus = objective()
        theta[j] = orig - h
        net.set_flat(theta)
        f_minus = objective()
        theta[j] = orig
        numeric[j] = (f_plus - f_minus) / (2 * h)
    net.set_flat(theta)
    worst = relative_error(bundle.params, numeric)

    if check_inputs:
        for x, gx in zip(inputs, bundle.inputs):
            num_x = np.empty_like(x)
            flat = x.reshape(-1)
            nflat = num_x.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                f_plus = objective()
                flat[j] = orig - h
                f_minus = objective()
                flat[j] = orig
                nflat[j] = (f_plus - f_minus) / (2 * h)
            worst = max(worst, relative_error(gx, num_x))
    return worst


# ----------------------------------------------------------------------
# Checkpoint format (version 1): a NumPy .npz archive with two members,
#   header  -- 0-d unicode array holding JSON
#              {"format": "attmaddpg-mlp", "version": 1, "sizes": [...],
#               "activations": [...], "stack": K|null, "softmax_groups": [...]|null}
#   params  -- float64 flat parameter vector in layer order (W_1, b_1, W_2, ...),
#              each W stored row-major with shape (*stack, in, out).
# ----------------------------------------------------------------------

def save_network(path: str | Path, net: MlpNetwork) -> None:
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **net.describe()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), params=net.params)


def load_network(path: str | Path) -> MlpNetwork:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        params = data["params"]
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not a network checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {header.get('version')}")
    net = network_from_description(header)
    net.set_flat(params)
    return net


def network_from_description(desc: dict) -> MlpNetwork:
    return MlpNetwork(desc["sizes"], desc["activations"], None, desc.get("stack"),
                      desc.get("softmax_groups"))
