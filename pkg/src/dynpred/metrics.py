"""Loss bookkeeping and image-quality metrics (MSE, SSIM, PSNR)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError, TrainingDivergedError, UndefinedPSNRError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class LossReport:
    l_of: float
    l_vq: float
    l_mse: float
    total: float


def total_loss(l_of: float, l_vq: float, l_mse: float, weights=(1.0, 1.0, 1.0)) -> LossReport:
    """Weighted sum of the flow, codebank and reconstruction terms (unit weights by default)."""
    comps = (l_of, l_vq, l_mse)
    if not all(math.isfinite(v) for v in comps):
        raise TrainingDivergedError(f"non-finite loss component (of={l_of}, vq={l_vq}, mse={l_mse})")
    total = sum(w * v for w, v in zip(weights, comps))
    return LossReport(float(l_of), float(l_vq), float(l_mse), float(total))


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the last two axes
    k = g.size
    rows = sliding_window_view(img, k, axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(rows, -1, -2), k, axis=-1) @ g, -1, -2)


def ssim_images(a, b, data_range: float = 1.0) -> np.ndarray:
    """Mean SSIM of every ``(H, W)`` image in two equally shaped stacks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim < 2 or min(a.shape[-2:]) < SSIM_WINDOW:
        raise ConfigurationError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[-2:]}")
    g = gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean(axis=(-2, -1))


def ssim(a, b, data_range: float = 1.0) -> float:
    """SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over valid window positions.

    Inputs with extra leading axes (channels, frames, sequences) are scored
    image by image and averaged.
    """
    return float(np.mean(ssim_images(a, b, data_range)))


def psnr(pred, target, data_range: float = 1.0) -> float:
    err = mse_loss(pred, target)
    if err == 0:
        raise UndefinedPSNRError("PSNR is undefined for identical inputs (MSE = 0)")
    return 10.0 * math.log10(data_range**2 / err)


def persistence_baseline(inputs, k: int) -> np.ndarray:
    """Repeat the last observed frame ``k`` times (works on ``(T, ...)`` or ``(B, T, ...)``)."""
    inputs = np.asarray(inputs)
    if inputs.ndim == 4:
        return np.repeat(inputs[-1:], k, axis=0)
    if inputs.ndim == 5:
        return np.repeat(inputs[:, -1:], k, axis=1)
    raise DimensionError(f"expected (T, C, H, W) or (B, T, C, H, W), got {inputs.shape}")
