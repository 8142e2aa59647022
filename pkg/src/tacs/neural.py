"""Small fully connected networks with hand-written reverse mode and Adam.

Inputs are ``(in,)`` vectors or ``(B, in)`` batches. Hidden layers use a C^1
activation (tanh or ELU) because guidance differentiates through the network.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ShapeError, TrainingError
from .geometry import atomic_write

CHECKPOINT_MAGIC = b"TMLP"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("tanh", "elu")
N_FREQ = 4


@dataclass
class Mlp:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count does not match layer_sizes")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise ShapeError(f"layer {i}: W{W.shape} b{b.shape} vs sizes {self.layer_sizes[i:i + 2]}")

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_sizes), [W.copy() for W in self.weights],
                   [b.copy() for b in self.biases], self.activation)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]


def init_mlp(layer_sizes, rng: np.random.Generator, activation: str = "tanh") -> Mlp:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ShapeError(f"bad layer sizes {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, activation)


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _act_grad(a, kind):
    # derivative written in terms of the activation output
    if kind == "tanh":
        return 1.0 - a * a
    return np.where(a > 0, 1.0, a + 1.0)


def _check_input(net: Mlp, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.n_in or x.ndim not in (1, 2):
        raise ShapeError(f"expected input (..., {net.n_in}), got {x.shape}")
    return x


def forward_cache(net: Mlp, x):
    x = _check_input(net, x)
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if i < last:
            h = _act(h, net.activation)
        acts.append(h)
    return h, acts


def forward(net: Mlp, x) -> np.ndarray:
    return forward_cache(net, x)[0]


def backward(net: Mlp, x, grad_output, cache=None):
    """Gradients of <net(x), grad_output> w.r.t. every parameter and the input.

    For batched input the parameter gradients are summed over the batch.
    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    ``net.params()``.
    """
    x = _check_input(net, x)
    acts = forward_cache(net, x)[1] if cache is None else cache
    g = np.asarray(grad_output, dtype=float)
    if g.shape != acts[-1].shape:
        raise ShapeError(f"grad_output {g.shape} does not match output {acts[-1].shape}")
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        if i < len(net.weights) - 1:
            g = g * _act_grad(acts[i + 1], net.activation)
        a_in = acts[i]
        if a_in.ndim == 1:
            grads[2 * i] = np.outer(a_in, g)
            grads[2 * i + 1] = g.copy()
        else:
            grads[2 * i] = a_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads, g


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float = 1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr, **kw)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params / grads / moments length mismatch")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeError(f"grad {i} shape {g.shape} vs param {params[i].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise TrainingError(f"non-finite gradient in parameter block {i} ({bad} entries) at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def time_features(t, T: int) -> np.ndarray:
    """(t/T, sin(2 pi k t/T), cos(2 pi k t/T)) for k = 1..4; shape (n, 9)."""
    s = np.atleast_1d(np.asarray(t, dtype=float)) / T
    k = np.arange(1, N_FREQ + 1)
    ang = 2 * np.pi * s[:, None] * k
    return np.concatenate([s[:, None], np.sin(ang), np.cos(ang)], axis=1)


# -- checkpoints -----------------------------------------------------------

def save_mlp(path, net: Mlp, meta: dict | None = None) -> None:
    """Binary parameters plus a ``.json`` sidecar with architecture and metadata."""
    path = Path(path)
    head = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(net.layer_sizes))
    head += struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.params())
    atomic_write(path, head + body)
    side = {"architecture": {"layer_sizes": net.layer_sizes, "activation": net.activation}}
    side.update(meta or {})
    atomic_write(path.with_suffix(".json"), json.dumps(side, indent=2, sort_keys=True).encode())


def load_mlp(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path}: not a network checkpoint")
    version, n = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"{path}: unsupported checkpoint version {version}")
    sizes = list(struct.unpack(f"<{n}I", raw[12:12 + 4 * n]))
    flat = np.frombuffer(raw[12 + 4 * n:], dtype="<f8").astype(float)
    meta = json.loads(path.with_suffix(".json").read_text())
    weights, biases, off = [], [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + a * b].reshape(a, b))
        off += a * b
        biases.append(flat[off:off + b].copy())
        off += b
    if off != flat.size:
        raise InvalidInputError(f"{path}: payload size does not match layer sizes")
    return Mlp(sizes, weights, biases, meta["architecture"]["activation"]), meta
