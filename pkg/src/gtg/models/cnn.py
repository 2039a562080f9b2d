"""Convolutional baseline front end: stacked 3x3 convolutions + ReLU.

The output is either flattened (the usual CNN baseline) or max-pooled over
cells (the ablation that mirrors the graph models' pooling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensornet import (
    conv2d_backward,
    conv2d_forward,
    glorot_uniform,
    maxpool_nodes,
    maxpool_nodes_backward,
    relu,
    relu_backward,
)

POOLINGS = ("flatten", "maxpool")


@dataclass
class ConvStack:
    kernels: list[np.ndarray]
    biases: list[np.ndarray]
    pooling: str = "flatten"
    grid_size: tuple[int, int] | None = None  # required for flatten

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        in_channels: int,
        features: int,
        layers: int = 2,
        pooling: str = "flatten",
        grid_size: tuple[int, int] | None = None,
    ) -> "ConvStack":
        if pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if pooling == "flatten" and grid_size is None:
            raise ValueError("the flatten variant needs a fixed grid size")
        kernels, biases = [], []
        cin = in_channels
        for _ in range(layers):
            kernels.append(glorot_uniform(rng, 9 * cin, 9 * features, shape=(3, 3, cin, features)))
            biases.append(np.zeros(features))
            cin = features
        return cls(kernels, biases, pooling, grid_size)

    @property
    def out_dim(self) -> int:
        f = self.kernels[-1].shape[-1]
        if self.pooling == "maxpool":
            return f
        w, h = self.grid_size  # type: ignore[misc]
        return w * h * f

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            out[f"{prefix}.{i}.kernel"] = k
            out[f"{prefix}.{i}.bias"] = b
        return out

    def num_parameters(self) -> int:
        return sum(k.size + b.size for k, b in zip(self.kernels, self.biases))


def conv_stack_forward(stack: ConvStack, x: np.ndarray):
    """``x`` is ``(B, W, H, C)``; returns ``(B, out_dim)``."""
    if stack.pooling == "flatten" and tuple(x.shape[1:3]) != tuple(stack.grid_size):
        raise ValueError(
            f"flattening CNN was built for a {stack.grid_size} grid, got {tuple(x.shape[1:3])}"
        )
    caches = []
    h = x
    for k, b in zip(stack.kernels, stack.biases):
        pre, cols = conv2d_forward(h, k, b)
        caches.append((cols, pre))
        h = relu(pre)
    bsz, w, hh, f = h.shape
    if stack.pooling == "flatten":
        return h.reshape(bsz, -1), (caches, h.shape, None)
    pooled, idx = maxpool_nodes(h.reshape(bsz, w * hh, f))
    return pooled, (caches, h.shape, idx)


def conv_stack_backward(stack: ConvStack, cache, dy: np.ndarray, prefix: str = "cnn"):
    caches, shape, idx = cache
    bsz, w, hh, f = shape
    if stack.pooling == "flatten":
        g = dy.reshape(shape)
    else:
        g = maxpool_nodes_backward(idx, w * hh, dy).reshape(shape)
    grads = {}
    for i in range(len(stack.kernels) - 1, -1, -1):
        cols, pre = caches[i]
        g = relu_backward(pre, g)
        g, dk, db = conv2d_backward(cols, stack.kernels[i], g)
        grads[f"{prefix}.{i}.kernel"] = dk
        grads[f"{prefix}.{i}.bias"] = db
    return g, grads
