"""Multi-layer perceptrons with persistent leaf parameters.

Hidden layers use Mish (or identity); the output layer is always a plain
affine map. Weights start He-uniform; output heads that must begin
near-neutral can request a small uniform scale instead.
"""

from __future__ import annotations

import numpy as np

from trfp.diffcore import graph
from trfp.diffcore.graph import Node, affine, mish

ACTIVATIONS = ("mish", "identity")


def mish_np(x: np.ndarray) -> np.ndarray:
    return x * np.tanh(np.logaddexp(0.0, x))


def logistic_np(x: np.ndarray) -> np.ndarray:
    return graph._sigmoid_np(x)


class Mlp:
    """Affine/activation stack with per-layer weight and bias leaf nodes."""

    def __init__(self, sizes, *, rng: np.random.Generator, activation="mish",
                 final_weight_scale=None, name="mlp"):
        if len(sizes) < 2:
            raise ValueError("Mlp needs at least input and output widths")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = list(int(s) for s in sizes)
        self.activation = activation
        self.name = name
        self.W = []
        self.b = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            bound = np.sqrt(6.0 / fan_in)
            if final_weight_scale is not None and i == n_layers - 1:
                bound = float(final_weight_scale)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.W.append(Node(w))
            self.b.append(Node(np.zeros(fan_out)))

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def _check_input(self, x_val: np.ndarray):
        if x_val.ndim != 2 or x_val.shape[1] != self.n_in:
            raise graph.GraphError(
                f"{self.name}: input shape {x_val.shape} incompatible with width {self.n_in}")

    def forward(self, x) -> Node:
        """Graph forward; gradients flow into the parameters and into x."""
        self._check_input(graph._value(x))
        h = x
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            h = affine(h, w, b)
            if i < last and self.activation == "mish":
                h = mish(h)
        return h

    def forward_const(self, x) -> Node:
        """Graph forward with parameters held constant (no adjoints into them)."""
        self._check_input(graph._value(x))
        h = x
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            h = affine(h, w.value, b.value)
            if i < last and self.activation == "mish":
                h = mish(h)
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward, no tape."""
        h = np.asarray(x, dtype=np.float64)
        self._check_input(h)
        last = len(self.W) - 1
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w.value + b.value
            if i < last and self.activation == "mish":
                h = mish_np(h)
        return h

    def parameters(self):
        out = []
        for i, (w, b) in enumerate(zip(self.W, self.b)):
            out.append((f"{self.name}.w{i}", w))
            out.append((f"{self.name}.b{i}", b))
        return out

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict:
        return {name: p.value for name, p in self.parameters()}

    def load_state(self, arrays: dict):
        for name, p in self.parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            incoming = np.asarray(arrays[name], dtype=np.float64)
            if incoming.shape != p.value.shape:
                raise ValueError(
                    f"{name}: shape {incoming.shape} != expected {p.value.shape}")
            p.value = incoming.copy()

    def copy_values_from(self, other: "Mlp"):
        for (_, mine), (_, theirs) in zip(self.parameters(), other.parameters()):
            mine.value = theirs.value.copy()

    @staticmethod
    def sizes_from_state(arrays: dict, name: str):
        """Recover the layer widths of a checkpointed Mlp from weight shapes."""
        widths = []
        i = 0
        while f"{name}.w{i}" in arrays:
            w = arrays[f"{name}.w{i}"]
            if not widths:
                widths.append(w.shape[0])
            widths.append(w.shape[1])
            i += 1
        if not widths:
            raise KeyError(f"no parameters found for {name}")
        return widths
