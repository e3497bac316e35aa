"""Minimal fully-connected networks on top of the autodiff core."""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np

from .autodiff import Tensor, matmul, relu, sigmoid

_ACTIVATIONS = {"identity": lambda x: x, "relu": relu, "sigmoid": sigmoid}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    """Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out))."""
    s = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-s, s, size=(fan_in, fan_out)).astype(dtype)


class Mlp:
    """ReLU network: widths[0] -> ... -> widths[-1], configurable output activation.

    Weights are glorot-uniform, biases zero. ``points_evaluated`` counts rows
    pushed through ``__call__`` (instrumentation; guarded by a lock so frozen
    models stay safe to evaluate from several threads).
    """

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        out_activation: str = "identity",
        dtype=np.float32,
    ):
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if out_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {out_activation!r}")
        self.widths = tuple(int(w) for w in widths)
        self.out_activation = out_activation
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.weights.append(Tensor(glorot_uniform(rng, fan_in, fan_out, dtype), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))
        self.points_evaluated = 0
        self._count_lock = threading.Lock()

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def __call__(self, x: Tensor | np.ndarray) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 2:
            raise ValueError(f"Mlp expects (n, features) input, got shape {x.shape}")
        if x.shape[1] != self.in_width:
            raise ValueError(f"Mlp expects {self.in_width} input features, got {x.shape[1]}")
        with self._count_lock:
            self.points_evaluated += x.shape[0]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = matmul(h, w) + b
            if i != last:
                h = relu(h)
        return _ACTIVATIONS[self.out_activation](h)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out

    def astype(self, dtype) -> "Mlp":
        """Cast parameters in place (used by float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self
