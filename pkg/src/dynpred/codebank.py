"""Vector-quantisation prior bank.

Latent maps are quantised position by position: every ``D``-vector along the
channel axis is replaced by its nearest codeword. The gradient contract is the
usual straight-through one: downstream gradients at the quantised output are
copied unchanged to the encoder output, and the codebook itself is trained
only by the two-term VQ loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numerics import DiffArray

BANK_SIZES = {"128x32": (128, 32), "256x64": (256, 64), "512x128": (512, 128)}


class Codebank:
    """``O x D`` table of codewords, held as a :class:`DiffArray`."""

    def __init__(self, codes):
        self.codes = codes if isinstance(codes, DiffArray) else DiffArray(np.asarray(codes))
        o, d = self.shape
        if o < 2 or d < 1:
            raise ConfigurationError(f"codebank needs O >= 2 and D >= 1, got {self.shape}")
        if not np.all(np.isfinite(self.codes.values)):
            raise ConfigurationError("codebank contains non-finite codewords")

    @classmethod
    def uniform(cls, size: int, dim: int, rng, dtype=np.float32) -> "Codebank":
        """Entries drawn from ``U[-1/O, 1/O]``."""
        return cls(rng.uniform(-1.0 / size, 1.0 / size, (size, dim)).astype(dtype))

    @property
    def shape(self):
        o, d = self.codes.shape
        return o, d

    def named_params(self):
        return {"codes": self.codes}


@dataclass
class QuantizeResult:
    indices: np.ndarray     # codeword index per position, shaped like Z without its channel axis
    quantized: np.ndarray   # same shape as Z


def _positions(z: np.ndarray, dim: int) -> np.ndarray:
    # (N, D, ...) -> (P, D); 2D input is already (P, D)
    if z.ndim == 2:
        if z.shape[1] != dim:
            raise DimensionError(f"expected {dim} channels, got {z.shape[1]}")
        return z
    if z.shape[1] != dim:
        raise DimensionError(f"latent has {z.shape[1]} channels but codewords have {dim}")
    return np.moveaxis(z, 1, -1).reshape(-1, dim)


def _restore(vectors: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.ndim == 2:
        return vectors
    moved = (like.shape[0],) + like.shape[2:] + (like.shape[1],)
    return np.ascontiguousarray(np.moveaxis(vectors.reshape(moved), -1, 1))


def _index_shape(like: np.ndarray):
    return (like.shape[0],) if like.ndim == 2 else (like.shape[0],) + like.shape[2:]


def quantize(z: np.ndarray, bank: Codebank) -> QuantizeResult:
    """Nearest codeword (squared Euclidean) per position; ties go to the lowest index.

    ``z`` is either ``(P, D)`` or a latent map with the channel axis at 1.
    """
    codes = bank.codes.values
    flat = _positions(z, codes.shape[1])
    # ||z||^2 is constant per row and does not affect the argmin
    dist = (codes * codes).sum(axis=1) - 2.0 * (flat @ codes.T)
    idx = np.argmin(dist, axis=1)
    quantized = _restore(codes[idx], z)
    return QuantizeResult(idx.reshape(_index_shape(z)), quantized)


@dataclass(frozen=True)
class VQLossConfig:
    beta: float = 0.99

    def validate(self):
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")


def vq_loss(z: np.ndarray, result: QuantizeResult, cfg: VQLossConfig = VQLossConfig(), n_codes=None):
    """``||sg[Z] - c||^2 + beta * ||Z - sg[c]||^2`` averaged over positions.

    Returns ``(loss, grad_z, grad_codes)``. The first term only moves the
    selected codewords, the commitment term only moves ``Z``. ``grad_codes``
    has ``n_codes`` rows (defaults to ``max(index) + 1``).
    """
    d = result.quantized.shape[1]
    zf = _positions(z, d)
    cf = _positions(result.quantized, d)
    idx = result.indices.reshape(-1)
    p = zf.shape[0]
    diff = zf - cf
    sq = float((diff.astype(np.float64) ** 2).sum()) / p
    loss = (1.0 + cfg.beta) * sq
    grad_z = _restore((2.0 * cfg.beta / p) * diff, z)
    n_codes = int(idx.max()) + 1 if n_codes is None else n_codes
    grad_codes = np.zeros((n_codes, d), dtype=diff.dtype)
    np.add.at(grad_codes, idx, (-2.0 / p) * diff)
    return loss, grad_z, grad_codes


def straight_through(z: np.ndarray, result: QuantizeResult, downstream_grad: np.ndarray) -> np.ndarray:
    """Gradient into ``Z`` from the quantised output: an exact copy."""
    if downstream_grad.shape != result.quantized.shape:
        raise DimensionError("downstream gradient must match the quantised output shape")
    return downstream_grad.copy()


def fuse_quantized(z: np.ndarray, result: QuantizeResult) -> np.ndarray:
    """Encoder output plus its quantised counterpart."""
    if z.shape != result.quantized.shape:
        raise DimensionError(f"shape mismatch: {z.shape} vs {result.quantized.shape}")
    return z + result.quantized


def usage_stats(results, n_codes: int):
    """Per-code hit counts over a batch of results and the code perplexity."""
    if isinstance(results, QuantizeResult):
        results = [results]
    counts = np.zeros(n_codes, dtype=np.int64)
    for r in results:
        counts += np.bincount(r.indices.reshape(-1), minlength=n_codes)
    total = counts.sum()
    if total == 0:
        return counts, 0.0
    prob = counts[counts > 0] / total
    entropy = float(-(prob * np.log(prob)).sum())
    return counts, float(np.exp(entropy))
