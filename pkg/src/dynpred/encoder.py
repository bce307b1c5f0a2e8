"""Multi-grained views (one global frame plus random local crops) and the
Conv2d -> LayerNorm -> ReLU encoder stacks applied to them."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .layers import Conv2d, LayerNorm, ReLU, Sequential
from .numerics import bilinear_gather


@dataclass(frozen=True)
class CropConfig:
    n_crops: int = 3
    crop_out: int = 32
    max_area_fraction: float = 0.5
    seed: int = 0

    def validate(self):
        if self.n_crops < 1:
            raise ConfigurationError("n_crops must be >= 1")
        if not 0 < self.max_area_fraction <= 0.5:
            raise ConfigurationError("max_area_fraction must lie in (0, 0.5]")
        if self.crop_out < 8:
            raise ConfigurationError("crop_out must be >= 8")


@dataclass(frozen=True)
class CropBox:
    top: int
    left: int
    height: int
    width: int

    @property
    def area(self) -> int:
        return self.height * self.width


def crop_side_range(height: int, width: int, cfg: CropConfig) -> tuple[int, int]:
    """Inclusive range of square crop sides that keep the area fraction below the cap."""
    if min(height, width) < cfg.crop_out:
        raise ConfigurationError(f"frame {height}x{width} is smaller than crop_out={cfg.crop_out}")
    hi = math.floor(math.sqrt(cfg.max_area_fraction) * min(height, width)) - 1
    while hi > 0 and hi * hi >= cfg.max_area_fraction * height * width:
        hi -= 1
    if hi < 1:
        raise ConfigurationError(f"no crop fits the area cap on a {height}x{width} frame")
    return min(cfg.crop_out, hi), hi


def resize_crop(seq: np.ndarray, box: CropBox, out: int) -> np.ndarray:
    """Cut ``box`` from every frame and bilinearly resize it to ``out x out``."""
    t, c, h, w = seq.shape
    rows = box.top + np.arange(out) * ((box.height - 1) / (out - 1))
    cols = box.left + np.arange(out) * ((box.width - 1) / (out - 1))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    sampled, _ = bilinear_gather(seq.reshape(1, t * c, h, w), rr[None], cc[None])
    return sampled.reshape(t, c, out, out)


def random_local_crops(seq: np.ndarray, cfg: CropConfig, rng: np.random.Generator):
    """Draw ``cfg.n_crops`` square boxes and return ``(crops, boxes)``.

    ``crops`` has shape ``(n_crops, T, C, crop_out, crop_out)``; each box is
    applied to all frames of the sequence.
    """
    cfg.validate()
    _, _, h, w = seq.shape
    lo, hi = crop_side_range(h, w, cfg)
    boxes = []
    for _ in range(cfg.n_crops):
        side = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        boxes.append(CropBox(top, left, side, side))
    crops = np.stack([resize_crop(seq, b, cfg.crop_out) for b in boxes])
    return crops.astype(seq.dtype, copy=False), boxes


# ---------------------------------------------------------------------------
# Encoders

SIZE_PRESETS = {
    "S": (16, 32),
    "B": (16, 32, 32, 64),
    "L": (16, 32, 64, 64, 64, 64, 64, 64),
}


@dataclass(frozen=True)
class EncoderConfig:
    n_blocks: int = 2
    kernel: int = 3
    channels: tuple[int, ...] = SIZE_PRESETS["S"]
    down_floor: int = 8

    @classmethod
    def preset(cls, size: str, kernel: int, out_channels: int | None = None, down_floor: int = 8):
        """S/B/L bundles; ``out_channels`` overrides the last width (it must equal the codeword size)."""
        try:
            channels = list(SIZE_PRESETS[size])
        except KeyError:
            raise ConfigurationError(f"unknown model size {size!r}; expected S, B or L") from None
        if out_channels is not None:
            channels[-1] = out_channels
        return cls(len(channels), kernel, tuple(channels), down_floor)

    def validate(self):
        if self.n_blocks not in (2, 4, 8):
            raise ConfigurationError(f"n_blocks must be 2, 4 or 8, got {self.n_blocks}")
        if self.kernel % 2 == 0:
            raise ConfigurationError("encoder kernel must be odd")
        if len(self.channels) != self.n_blocks:
            raise ConfigurationError("need one channel width per block")


def encoder_strides(side: int, cfg: EncoderConfig) -> list[int]:
    """Stride 2 for the first ``min(N_e, log2(side / down_floor))`` blocks, then stride 1."""
    if side < cfg.down_floor:
        raise ConfigurationError(f"input side {side} is below down_floor={cfg.down_floor}")
    n_down = min(cfg.n_blocks, int(math.floor(math.log2(side / cfg.down_floor))))
    return [2] * n_down + [1] * (cfg.n_blocks - n_down)


def encoded_side(side: int, cfg: EncoderConfig) -> int:
    for s in encoder_strides(side, cfg):
        side = (side - 1) // s + 1
    return side


class Encoder:
    """``N_e`` blocks of Conv2d -> LayerNorm -> ReLU over ``(N, C, H, W)`` frames."""

    def __init__(self, cfg: EncoderConfig, in_channels: int, side: int, *, rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.strides = encoder_strides(side, cfg)
        self.out_side = encoded_side(side, cfg)
        blocks = []
        c_in = in_channels
        for i, (c_out, s) in enumerate(zip(cfg.channels, self.strides)):
            blocks.append((f"block{i}", Sequential([
                ("conv", Conv2d(c_in, c_out, cfg.kernel, s, rng=rng, dtype=dtype)),
                ("norm", LayerNorm(c_out, dtype=dtype)),
                ("act", ReLU()),
            ])))
            c_in = c_out
        self.net = Sequential(blocks)
        self.out_channels = c_in

    def named_params(self):
        return self.net.named_params()

    def forward(self, frames):
        return self.net.forward(frames)

    def backward(self, dz):
        return self.net.backward(dz)


def encode(seq: np.ndarray, encoder: Encoder) -> np.ndarray:
    """Encode a ``(T, C, H, W)`` sequence frame by frame into ``(T, C^, H^, W^)``."""
    return encoder.forward(seq)
