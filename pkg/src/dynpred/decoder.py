"""Global/local feature fusion and the deconvolutional decoder.

Decoder forms:

* ``DC``        deconv + ReLU per block
* ``CL+DC``     conv + ReLU, then deconv + ReLU
* ``CL+DC+R``   ``x + ReLU(conv(x))``, then deconv + ReLU

The first ``log2(H / H~)`` blocks upsample by 2, the remaining blocks keep the
resolution. A 1x1 conv head mixes the time-as-channel axis into ``K * C``
output channels and a sigmoid maps them to ``[0, 1]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .layers import Conv2d, Deconv2d, ReLU, Sequential, collect_params, upsample_deconv
from .numerics import sigmoid, sigmoid_backward

DECODER_FORMS = ("DC", "CL+DC", "CL+DC+R")


@dataclass(frozen=True)
class DecoderConfig:
    form: str = "DC"
    depth: int = 3
    channels: tuple[int, ...] | None = None

    def widths(self, default: int = 16) -> tuple[int, ...]:
        return self.channels if self.channels is not None else (default,) * self.depth

    def validate(self):
        if self.form not in DECODER_FORMS:
            raise ConfigurationError(f"decoder form must be one of {DECODER_FORMS}, got {self.form!r}")
        if not 2 <= self.depth <= 6:
            raise ConfigurationError(f"decoder depth must lie in [2, 6], got {self.depth}")
        if self.channels is not None and len(self.channels) != self.depth:
            raise ConfigurationError("need one channel width per decoder block")


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    return x.repeat(factor, axis=-2).repeat(factor, axis=-1)


def upsample_nearest_backward(dy: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return dy
    *lead, h, w = dy.shape
    return dy.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1))


def _fusion_factor(global_shape, local_shape) -> int:
    if global_shape[:-2] != local_shape[:-2]:
        raise DimensionError(f"local feature {local_shape} does not match global {global_shape} outside space")
    gh, gw = global_shape[-2:]
    lh, lw = local_shape[-2:]
    if gh % lh or gw % lw or gh // lh != gw // lw:
        raise DimensionError(f"cannot upsample local {lh}x{lw} onto global {gh}x{gw}")
    return gh // lh


def fuse(global_feat: np.ndarray, local_feats, boxes=None) -> np.ndarray:
    """``global + sum_h upsample(local_h)``.

    The global feature is used once for all crops. ``boxes`` is accepted so a
    placement-aware fusion can share this signature; the broadcast fusion
    here does not use it.
    """
    fused = global_feat.copy()
    for local in local_feats:
        fused += upsample_nearest(local, _fusion_factor(global_feat.shape, local.shape))
    return fused


def fuse_backward(d_fused: np.ndarray, local_shapes):
    """Gradients for the global feature and for each local feature."""
    d_locals = [
        upsample_nearest_backward(d_fused, _fusion_factor(d_fused.shape, shape)) for shape in local_shapes
    ]
    return d_fused, d_locals


class _ResidualConv:
    # x + relu(conv(x))
    def __init__(self, channels, *, rng, dtype):
        self.conv = Conv2d(channels, channels, 3, rng=rng, dtype=dtype)
        self.act = ReLU()

    def named_params(self):
        return collect_params([("conv", self.conv)])

    def forward(self, x):
        return x + self.act.forward(self.conv.forward(x))

    def backward(self, dy):
        return dy + self.conv.backward(self.act.backward(dy))


def decoder_upsamplings(in_side: int, out_side: int, depth: int) -> int:
    ratio = out_side / in_side
    n_up = int(round(math.log2(ratio))) if ratio >= 1 else -1
    if n_up < 0 or in_side * 2**n_up != out_side:
        raise ConfigurationError(f"cannot reach {out_side} from {in_side} with 2x upsampling blocks")
    if n_up > depth:
        raise ConfigurationError(f"reaching {out_side} from {in_side} needs {n_up} upsampling blocks, depth is {depth}")
    return n_up


class Decoder:
    """Decode fused ``(B, T, C~, H~, W~)`` features into ``(B, K, C, H, W)`` frames."""

    def __init__(self, cfg: DecoderConfig, in_ch, in_side, out_side, steps_in, steps_out, out_channels,
                 *, rng, dtype=np.float32, output_bias=0.0):
        cfg.validate()
        self.cfg = cfg
        self.steps_in, self.steps_out, self.out_channels = steps_in, steps_out, out_channels
        n_up = decoder_upsamplings(in_side, out_side, cfg.depth)
        blocks = []
        c_in = in_ch
        for i, c_out in enumerate(cfg.widths()):
            layers = []
            if cfg.form == "CL+DC":
                layers += [("conv", Conv2d(c_in, c_in, 3, rng=rng, dtype=dtype)), ("conv_act", ReLU())]
            elif cfg.form == "CL+DC+R":
                layers += [("res", _ResidualConv(c_in, rng=rng, dtype=dtype))]
            if i < n_up:
                deconv = upsample_deconv(c_in, c_out, rng=rng, dtype=dtype)
            else:
                deconv = Deconv2d(c_in, c_out, 3, 1, 1, rng=rng, dtype=dtype)
            layers += [("deconv", deconv), ("act", ReLU())]
            blocks.append((f"block{i}", Sequential(layers)))
            c_in = c_out
        self.blocks = Sequential(blocks)
        self.head = Conv2d(steps_in * c_in, steps_out * out_channels, 1, rng=rng, dtype=dtype)
        self.head.spec.bias.values[...] = output_bias
        self._sig = self._shapes = None

    def named_params(self):
        return collect_params([("blocks", self.blocks), ("head", self.head)])

    def forward(self, fused: np.ndarray) -> np.ndarray:
        b, t = fused.shape[:2]
        if t != self.steps_in:
            raise DimensionError(f"decoder built for {self.steps_in} steps, got {t}")
        h = self.blocks.forward(fused.reshape((b * t,) + fused.shape[2:]))
        _, c, hh, ww = h.shape
        logits = self.head.forward(h.reshape(b, t * c, hh, ww))
        out, self._sig = sigmoid(logits)
        self._shapes = (b, t, c, hh, ww)
        return out.reshape(b, self.steps_out, self.out_channels, hh, ww)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        b, t, c, hh, ww = self._shapes
        d_logits = sigmoid_backward(d_out.reshape(b, -1, hh, ww), self._sig)
        dh = self.head.backward(d_logits).reshape(b * t, c, hh, ww)
        d_fused = self.blocks.backward(dh)
        return d_fused.reshape((b, t) + d_fused.shape[1:])


def decode(fused: np.ndarray, decoder: Decoder) -> np.ndarray:
    """Decode one fused ``(T, C~, H~, W~)`` map into ``(K, C, H, W)`` frames."""
    return decoder.forward(fused[None])[0]
