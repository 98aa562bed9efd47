"""Plain dense multi-layer perceptrons over ParamSet storage.

The whole layer stack runs as one fused graph node with a hand-written
backward pass; keeping the tape short matters because training does tens
of thousands of small updates per run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamSet, he_uniform_init

ACTIVATIONS = ("linear", "relu", "tanh")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")


def init_mlp(params: ParamSet, layers: list[LayerSpec], prefix: str, rng: np.random.Generator):
    """Register He-uniform weights and zero biases for each layer."""
    for i, layer in enumerate(layers):
        params.add(f"{prefix}w{i}", he_uniform_init(rng, layer.in_dim, (layer.in_dim, layer.out_dim)))
        params.add(f"{prefix}b{i}", np.zeros(layer.out_dim))


def forward_mlp(params: ParamSet, layers: list[LayerSpec], x, prefix: str = "") -> T.Tensor:
    """Run x (batch, in_dim) through the layer stack; returns the final activation."""
    if not layers:
        raise ValueError("forward_mlp needs at least one layer")
    x_tensor = x if isinstance(x, T.Tensor) else None
    xv = np.asarray(x.data if x_tensor is not None else x, dtype=np.float64)
    if xv.ndim == 1:
        xv = xv.reshape(1, -1)

    weights, biases = [], []
    for i, layer in enumerate(layers):
        if (i == 0 and xv.shape[-1] != layer.in_dim) or (i > 0 and layers[i - 1].out_dim != layer.in_dim):
            got = xv.shape[-1] if i == 0 else layers[i - 1].out_dim
            raise ValueError(
                f"layer {prefix}{i}: expected input dim {layer.in_dim}, got {got}"
            )
        wname, bname = f"{prefix}w{i}", f"{prefix}b{i}"
        if wname not in params or bname not in params:
            raise ValueError(f"missing parameters {wname}/{bname} for layer {i}")
        w = params[wname]
        if w.data.shape != (layer.in_dim, layer.out_dim):
            raise ValueError(
                f"layer {prefix}{i}: weight shape {w.data.shape} does not match "
                f"spec ({layer.in_dim}, {layer.out_dim})"
            )
        weights.append(w)
        biases.append(params[bname])

    # forward, caching what backward needs
    inputs = [xv]  # input to each layer (post-activation of the previous)
    h = xv
    for layer, w, b in zip(layers, weights, biases):
        h = h @ w.data + b.data
        if layer.activation == "relu":
            np.maximum(h, 0.0, out=h)
        elif layer.activation == "tanh":
            np.tanh(h, out=h)
        inputs.append(h)
    out_data = h

    def bw(out):
        g = out.grad
        for i in range(len(layers) - 1, -1, -1):
            act = layers[i].activation
            if act == "relu":
                g = g * (inputs[i + 1] > 0.0)
            elif act == "tanh":
                y = inputs[i + 1]
                g = g * (1.0 - y * y)
            w, b = weights[i], biases[i]
            if w.requires_grad:
                w.grad += inputs[i].T @ g
            if b.requires_grad:
                b.grad += g.sum(axis=0)
            if i > 0:
                g = g @ w.data.T
        if x_tensor is not None and x_tensor.requires_grad:
            g = g @ weights[0].data.T
            if x_tensor.grad is None:
                x_tensor.grad = g
            else:
                x_tensor.grad += g

    parents = tuple(weights) + tuple(biases) + ((x_tensor,) if x_tensor is not None else ())
    return T._node(out_data, parents, bw)
