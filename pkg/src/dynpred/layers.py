"""Stateful layer wrappers around the operators in :mod:`dynpred.numerics`.

A layer caches whatever its backward pass needs during ``forward`` and so can
be applied once per forward/backward cycle. Parameters are exposed through
``named_params()`` as ``{name: DiffArray}`` so optimisers and checkpoints can
walk them uniformly.
"""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import ConvSpec, DiffArray


def he_normal(rng, shape, fan_in, dtype, gain=1.0):
    std = gain * np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, *, rng, dtype=np.float32, init_gain=1.0):
        padding = kernel // 2 if padding is None else padding
        w = he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, dtype, init_gain)
        self.spec = ConvSpec(DiffArray(w), DiffArray(np.zeros(out_ch, dtype)), stride, padding)
        self._cache = None

    def named_params(self):
        return {"kernel": self.spec.kernel, "bias": self.spec.bias}

    def forward(self, x):
        y, self._cache = nx.conv2d(x, self.spec)
        return y

    def backward(self, dy):
        return nx.conv2d_backward(dy, self._cache)


class Deconv2d:
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, *, rng, dtype=np.float32, init_gain=1.0):
        fan_in = in_ch * kernel * kernel / stride**2
        w = he_normal(rng, (in_ch, out_ch, kernel, kernel), fan_in, dtype, init_gain)
        self.spec = ConvSpec(DiffArray(w), DiffArray(np.zeros(out_ch, dtype)), stride, padding)
        self._cache = None

    def named_params(self):
        return {"kernel": self.spec.kernel, "bias": self.spec.bias}

    def forward(self, x):
        y, self._cache = nx.deconv2d(x, self.spec)
        return y

    def backward(self, dy):
        return nx.deconv2d_backward(dy, self._cache)


def upsample_deconv(in_ch, out_ch, *, rng, dtype):
    """Exact 2x spatial upsampling: kernel 4, stride 2, padding 1."""
    return Deconv2d(in_ch, out_ch, 4, 2, 1, rng=rng, dtype=dtype)


class LayerNorm:
    def __init__(self, channels, eps=1e-5, dtype=np.float32):
        self.gain = DiffArray(np.ones(channels, dtype))
        self.bias = DiffArray(np.zeros(channels, dtype))
        self.eps = eps
        self._cache = None

    def named_params(self):
        return {"gain": self.gain, "bias": self.bias}

    def forward(self, x):
        y, self._cache = nx.layer_norm(x, self.gain, self.bias, self.eps)
        return y

    def backward(self, dy):
        return nx.layer_norm_backward(dy, self._cache)


class ReLU:
    def __init__(self):
        self._mask = None

    def named_params(self):
        return {}

    def forward(self, x):
        y, self._mask = nx.relu(x)
        return y

    def backward(self, dy):
        return nx.relu_backward(dy, self._mask)


class Sequential:
    def __init__(self, layers):
        # layers: list of (name, layer)
        self.layers = list(layers)

    def named_params(self):
        return collect_params(self.layers)

    def forward(self, x):
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


def collect_params(named_children) -> dict[str, DiffArray]:
    """Flatten ``[(prefix, child), ...]`` into ``{"prefix.name": DiffArray}``."""
    out = {}
    for prefix, child in named_children:
        for name, p in child.named_params().items():
            out[f"{prefix}.{name}"] = p
    return out
