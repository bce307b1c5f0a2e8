"""Synthetic dynamical-system sequences, dataset splits and the STDS file format.

A frame sequence is a plain ``(T, C, H, W)`` float array with values in
``[0, 1]``; a dataset is a stack ``(N, T, C, H, W)`` of such sequences.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigurationError,
    LoadError,
    NonFiniteDataError,
    SimulationDivergedError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

STDS_MAGIC = b"STDS"
STDS_VERSION = 1
_STDS_HEADER = struct.Struct("<4sI5I")


def check_sequence(seq: np.ndarray, min_frames: int = 2) -> np.ndarray:
    """Validate a ``(T, C, H, W)`` frame sequence and return it as an array."""
    seq = np.asarray(seq)
    if seq.ndim != 4:
        raise ConfigurationError(f"frame sequence must be 4D (T, C, H, W), got shape {seq.shape}")
    t, _, h, w = seq.shape
    if t < min_frames:
        raise ConfigurationError(f"frame sequence needs at least {min_frames} frames, got {t}")
    if h < 8 or w < 8:
        raise ConfigurationError(f"frames must be at least 8x8, got {h}x{w}")
    if not np.all(np.isfinite(seq)):
        raise ConfigurationError("frame sequence contains non-finite values")
    if seq.size and (seq.min() < 0.0 or seq.max() > 1.0):
        raise ConfigurationError("frame values must lie in [0, 1]")
    return seq


# ---------------------------------------------------------------------------
# Gray-Scott reaction-diffusion


@dataclass(frozen=True)
class GrayScottParams:
    Du: float = 0.16
    Dv: float = 0.08
    F: float = 0.055
    k: float = 0.062
    dt: float = 1.0
    steps_per_frame: int = 10
    grid: tuple[int, int] = (64, 64)
    warmup: int = 500
    n_spots: int = 1

    def validate(self) -> None:
        if self.Du < 0 or self.Dv < 0:
            raise ConfigurationError("diffusion rates must be non-negative")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.dt * max(self.Du, self.Dv) * 4 > 1:
            raise ConfigurationError(
                f"explicit scheme unstable: dt*max(Du,Dv)*4 = {self.dt * max(self.Du, self.Dv) * 4:g} > 1"
            )
        if self.steps_per_frame < 1 or self.warmup < 0:
            raise ConfigurationError("steps_per_frame must be >= 1 and warmup >= 0")
        if min(self.grid) < 8:
            raise ConfigurationError(f"grid must be at least 8x8, got {self.grid}")
        if self.n_spots < 1:
            raise ConfigurationError("n_spots must be >= 1")


def laplacian(z: np.ndarray) -> np.ndarray:
    """Five-point Laplacian with periodic boundaries."""
    return (
        np.roll(z, 1, axis=-2) + np.roll(z, -1, axis=-2)
        + np.roll(z, 1, axis=-1) + np.roll(z, -1, axis=-1)
        - 4.0 * z
    )


def gray_scott_step(u: np.ndarray, v: np.ndarray, params: GrayScottParams):
    """One explicit Euler step; returns new ``(u, v)`` without clamping."""
    uvv = u * v * v
    du = params.Du * laplacian(u) - uvv + params.F * (1.0 - u)
    dv = params.Dv * laplacian(v) + uvv - (params.F + params.k) * v
    return u + params.dt * du, v + params.dt * dv


def gray_scott_initial_state(params: GrayScottParams, seed: int):
    """Resting state ``u=1, v=0`` with a centred square perturbation.

    Additional spots (``n_spots > 1``) are placed uniformly at random and a
    small seeded noise field breaks the symmetry.
    """
    rng = np.random.default_rng(seed)
    h, w = params.grid
    u = np.ones((h, w))
    v = np.zeros((h, w))
    half = max(1, min(h, w) // 16)
    centres = [(h // 2, w // 2)]
    for _ in range(params.n_spots - 1):
        centres.append((int(rng.integers(half, h - half)), int(rng.integers(half, w - half))))
    for r, c in centres:
        u[r - half:r + half, c - half:c + half] = 0.5
        v[r - half:r + half, c - half:c + half] = 0.25
    u += 0.01 * (rng.random((h, w)) - 0.5)
    v += 0.01 * (rng.random((h, w)) - 0.5)
    return np.clip(u, 0.0, 1.0), np.clip(v, 0.0, 1.0)


def simulate_gray_scott(params: GrayScottParams, seed: int, T: int, initial=None) -> np.ndarray:
    """Integrate the Gray-Scott system and return ``T`` frames of ``(u, v)``.

    The state is integrated in float64 and clamped to ``[0, 1]`` only when a
    frame is exported. ``initial`` overrides the seeded initial ``(u, v)``.
    """
    params.validate()
    if T < 2:
        raise ConfigurationError(f"T must be >= 2, got {T}")
    if initial is None:
        u, v = gray_scott_initial_state(params, seed)
    else:
        u, v = (np.array(a, dtype=np.float64) for a in initial)
        if u.shape != tuple(params.grid) or v.shape != tuple(params.grid):
            raise ConfigurationError("initial state shape does not match grid")

    def advance(u, v, n):
        for _ in range(n):
            u, v = gray_scott_step(u, v, params)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise SimulationDivergedError("Gray-Scott state became non-finite")
        return u, v

    u, v = advance(u, v, params.warmup)
    frames = np.empty((T, 2) + tuple(params.grid), dtype=np.float32)
    for t in range(T):
        if t:
            u, v = advance(u, v, params.steps_per_frame)
        frames[t, 0] = np.clip(u, 0.0, 1.0)
        frames[t, 1] = np.clip(v, 0.0, 1.0)
    return frames


# ---------------------------------------------------------------------------
# Moving Gaussian blobs


@dataclass(frozen=True)
class BlobSceneParams:
    n_blobs: int = 2
    radius: float = 6.0
    speed: float = 3.0
    grid: tuple[int, int] = (64, 64)
    seed: int = 0

    def validate(self) -> None:
        if self.n_blobs < 1:
            raise ConfigurationError("n_blobs must be >= 1")
        if not 0 < self.radius < min(self.grid) / 2:
            raise ConfigurationError(f"radius must lie in (0, {min(self.grid) / 2})")
        if self.speed < 0:
            raise ConfigurationError("speed must be non-negative")
        if min(self.grid) < 8:
            raise ConfigurationError(f"grid must be at least 8x8, got {self.grid}")


def _reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # mirror into [lo, hi]; points already inside are returned untouched
    span = hi - lo
    m = np.mod(x - lo, 2 * span)
    folded = lo + np.where(m <= span, m, 2 * span - m)
    return np.where((x >= lo) & (x <= hi), x, folded)


def blob_trajectories(params: BlobSceneParams, T: int) -> np.ndarray:
    """Blob centres, shape ``(T, n_blobs, 2)`` as (row, col)."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    h, w = params.grid
    r = params.radius
    start = np.stack([rng.uniform(r, h - r, params.n_blobs), rng.uniform(r, w - r, params.n_blobs)], axis=1)
    angle = rng.uniform(0.0, 2 * np.pi, params.n_blobs)
    velocity = params.speed * np.stack([np.sin(angle), np.cos(angle)], axis=1)
    t = np.arange(T, dtype=np.float64)[:, None, None]
    free = start[None] + t * velocity[None]
    rows = _reflect(free[..., 0], r, h - r)
    cols = _reflect(free[..., 1], r, w - r)
    return np.stack([rows, cols], axis=-1)


def simulate_moving_blobs(params: BlobSceneParams, T: int) -> np.ndarray:
    """Render Gaussian blobs moving at constant speed and bouncing off the walls.

    Returns a single-channel ``(T, 1, H, W)`` float32 sequence.
    """
    if T < 2:
        raise ConfigurationError(f"T must be >= 2, got {T}")
    centres = blob_trajectories(params, T)
    h, w = params.grid
    sigma = params.radius / 2.0
    rr = np.arange(h, dtype=np.float64)[None, None, :, None]
    cc = np.arange(w, dtype=np.float64)[None, None, None, :]
    d2 = (rr - centres[..., 0, None, None]) ** 2 + (cc - centres[..., 1, None, None]) ** 2
    frames = np.exp(-d2 / (2 * sigma**2)).max(axis=1)
    return frames[:, None].astype(np.float32)


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class DatasetSplit:
    train: int
    val: int
    test: int

    @classmethod
    def from_fractions(cls, pool_size: int, train=0.8, val=0.1) -> "DatasetSplit":
        n_train = int(round(pool_size * train))
        n_val = int(round(pool_size * val))
        return cls(n_train, n_val, pool_size - n_train - n_val)

    @property
    def total(self) -> int:
        return self.train + self.val + self.test


def make_splits(pool_size: int, split: DatasetSplit):
    """Contiguous ``(train, val, test)`` index ranges in generation order."""
    if min(split.train, split.val, split.test) < 0:
        raise ConfigurationError("split counts must be non-negative")
    if split.total > pool_size:
        raise ConfigurationError(f"split needs {split.total} sequences but the pool holds {pool_size}")
    a = split.train
    b = a + split.val
    return range(0, a), range(a, b), range(b, b + split.test)


# ---------------------------------------------------------------------------
# STDS binary format


def write_sequences(path, sequences) -> None:
    """Write sequences sharing one ``(T, C, H, W)`` shape to an STDS file.

    Layout (little-endian): ``b"STDS"``, uint32 version, uint32 N, T, C, H, W,
    then ``N*T*C*H*W`` float32 values in row-major order.
    """
    if isinstance(sequences, np.ndarray):
        data = sequences
    else:
        seqs = [np.asarray(s) for s in sequences]
        if not seqs:
            raise ConfigurationError("cannot infer (T, C, H, W) from an empty list; pass a 5D array")
        shapes = {s.shape for s in seqs}
        if len(shapes) != 1:
            raise ConfigurationError(f"sequences have differing shapes: {sorted(shapes)}")
        data = np.stack(seqs)
    if data.ndim != 5:
        raise ConfigurationError(f"expected (N, T, C, H, W) data, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ConfigurationError("refusing to write non-finite values")
    header = _STDS_HEADER.pack(STDS_MAGIC, STDS_VERSION, *data.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_sequences(path) -> np.ndarray:
    """Read an STDS file into a float32 ``(N, T, C, H, W)`` array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != STDS_MAGIC:
        raise BadMagicError(f"{path}: not an STDS file (magic {raw[:4]!r})")
    if len(raw) < 8:
        raise TruncatedPayloadError(f"{path}: header truncated")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != STDS_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported STDS version {version}")
    if len(raw) < _STDS_HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _, _, *shape = _STDS_HEADER.unpack_from(raw, 0)
    count = int(np.prod(shape, dtype=np.int64))
    expected = _STDS_HEADER.size + 4 * count
    if len(raw) < expected:
        raise TruncatedPayloadError(f"{path}: payload has {len(raw) - _STDS_HEADER.size} bytes, expected {4 * count}")
    if len(raw) > expected:
        raise LoadError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_STDS_HEADER.size).reshape(shape)
    if not np.all(np.isfinite(data)):
        raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    return data.astype(np.float32)
