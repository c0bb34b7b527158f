"""Parameter initialisation and the small dense building blocks shared by all modules.

Parameters live in flat dicts keyed ``stage.layer.tensor`` so the same names are
used in memory, in the weight file manifest, and in gradient-check reports.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, relu


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, scale: float = 1.0):
    bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def param(data, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def init_linear(params: dict, rng, name: str, fan_in: int, fan_out: int, dtype=np.float64):
    params[f"{name}.w"] = param(xavier(rng, fan_in, fan_out), dtype)
    params[f"{name}.b"] = param(np.zeros(fan_out), dtype)


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def init_layer_norm(params: dict, name: str, d: int, dtype=np.float64):
    params[f"{name}.gain"] = param(np.ones(d), dtype)
    params[f"{name}.bias"] = param(np.zeros(d), dtype)


def init_mlp(params: dict, rng, name: str, sizes, dtype=np.float64):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(params, rng, f"{name}.{i}", a, b, dtype)


def mlp(x: Tensor, params: dict, name: str, n_layers: int = 3) -> Tensor:
    """ReLU between layers, linear output."""
    for i in range(n_layers):
        x = linear(x, params, f"{name}.{i}")
        if i < n_layers - 1:
            x = relu(x)
    return x
