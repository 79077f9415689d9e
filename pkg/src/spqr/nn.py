"""Small fully connected networks with hand-written backward and Adam.

Parameters may carry a leading "stack" axis of size K so that an ensemble of K
identically shaped networks runs as a single batched matmul.  A stacked
weight has shape (K, fan_in, fan_out) and its bias (K, fan_out).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(eq=False)
class Mlp:
    layer_sizes: tuple
    activation: str
    weights: list
    biases: list

    @property
    def stacked(self) -> bool:
        return self.weights[0].ndim == 3

    @property
    def n_stack(self) -> int:
        return self.weights[0].shape[0] if self.stacked else 1

    def arrays(self) -> list:
        return [*self.weights, *self.biases]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.activation,
                   [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def member(self, k: int) -> "Mlp":
        if not self.stacked:
            raise ValueError("not a stacked network")
        return Mlp(self.layer_sizes, self.activation,
                   [w[k].copy() for w in self.weights], [b[k].copy() for b in self.biases])


def init(layer_sizes, seed=0, activation: str = "relu") -> Mlp:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if any(s <= 0 for s in sizes):
        raise ValueError("layer widths must be positive")
    if activation not in ("relu", "tanh"):
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, activation, weights, biases)


def stack(nets) -> Mlp:
    nets = list(nets)
    first = nets[0]
    return Mlp(first.layer_sizes, first.activation,
               [np.stack([n.weights[i] for n in nets]) for i in range(len(first.weights))],
               [np.stack([n.biases[i] for n in nets]) for i in range(len(first.biases))])


def init_stack(layer_sizes, n: int, seed=0, activation: str = "relu") -> Mlp:
    return stack(init(layer_sizes, seed=[seed, k], activation=activation) for k in range(n))


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0.0).astype(z.dtype) if name == "relu" else 1.0 - a * a


def forward(params: Mlp, x):
    """Returns (output, cache).  Stacked params give output of shape (K, B, out)."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape[-1] != params.layer_sizes[0]:
        raise ValueError(f"input width {h.shape[-1]} != {params.layer_sizes[0]}")
    inputs, pre = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + (b[:, None, :] if w.ndim == 3 else b)
        pre.append(z)
        h = z if i == last else _act(params.activation, z)
    return h, (inputs, pre)


def backward(params: Mlp, cache, d_out):
    """Reverse pass; returns (param_grads in ``Mlp.arrays`` order, dL/dinput)."""
    inputs, pre = cache
    g = np.asarray(d_out, dtype=np.float64)
    if g.shape != pre[-1].shape:
        raise ValueError(f"gradient shape {g.shape} != output shape {pre[-1].shape}")
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            z = pre[i]
            g = g * _act_grad(params.activation, z, _act(params.activation, z))
        h = inputs[i]
        w = params.weights[i]
        gw[i] = np.swapaxes(h, -1, -2) @ g
        gb[i] = g.sum(axis=-2)
        g = g @ np.swapaxes(w, -1, -2)
    if g.ndim == 3 and inputs[0].ndim == 2:
        g = g.sum(axis=0)   # input shared by every stacked member
    return [*gw, *gb], g


@dataclass(eq=False)
class AdamState:
    lr: float
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mlp, lr: float) -> "AdamState":
        arrs = params.arrays()
        return cls(lr, [np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs])


def adam_step(params: Mlp, grads, state: AdamState) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    for gr in grads:
        if not np.all(np.isfinite(gr)):
            raise NonFiniteGradient(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def to_json(params: Mlp) -> dict:
    if params.stacked:
        raise ValueError("serialise members one at a time")
    return {
        "layer_sizes": list(params.layer_sizes),
        "activation": params.activation,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def from_json(doc: dict) -> Mlp:
    sizes = tuple(doc["layer_sizes"])
    weights = [np.asarray(w, dtype=np.float64) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    for (fi, fo), w, b in zip(zip(sizes[:-1], sizes[1:]), weights, biases):
        if w.shape != (fi, fo) or b.shape != (fo,):
            raise ValueError("checkpoint shapes do not match layer_sizes")
    return Mlp(sizes, doc["activation"], weights, biases)


def save(params: Mlp, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json(params), fh)


def load(path) -> Mlp:
    with open(path) as fh:
        return from_json(json.load(fh))
