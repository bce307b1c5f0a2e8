"""STCK checkpoint files.

Layout (little-endian)::

    b"STCK"  uint32 version  32-byte sha256 config digest
    repeated until EOF:
        uint32 name_len, name (utf-8), uint32 rank, rank * uint32 dims,
        prod(dims) float32 values

Names starting with ``__`` carry training state (epoch counter, optimiser
velocity) rather than model parameters.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ConfigurationError,
    DigestMismatchError,
    LoadError,
    NonFiniteDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

STCK_MAGIC = b"STCK"
STCK_VERSION = 1
DIGEST_SIZE = 32
EPOCH_KEY = "__epoch__"
VELOCITY_PREFIX = "__velocity__."
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    digest: bytes
    tensors: dict = field(default_factory=dict)

    @property
    def params(self):
        return {k: v for k, v in self.tensors.items() if not k.startswith("__")}

    @property
    def epoch(self):
        t = self.tensors.get(EPOCH_KEY)
        return None if t is None else int(t[0])

    @property
    def velocity(self):
        n = len(VELOCITY_PREFIX)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(VELOCITY_PREFIX)}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    if len(ckpt.digest) != DIGEST_SIZE:
        raise ConfigurationError(f"config digest must be {DIGEST_SIZE} bytes")
    parts = [STCK_MAGIC, _U32.pack(STCK_VERSION), ckpt.digest]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes, expected_digest: bytes | None = None, source="checkpoint") -> Checkpoint:
    if raw[:4] != STCK_MAGIC:
        raise BadMagicError(f"{source}: not an STCK file (magic {raw[:4]!r})")
    if len(raw) < 8 + DIGEST_SIZE:
        raise TruncatedPayloadError(f"{source}: header truncated")
    (version,) = _U32.unpack_from(raw, 4)
    if version != STCK_VERSION:
        raise UnsupportedVersionError(f"{source}: unsupported STCK version {version}")
    digest = bytes(raw[8:8 + DIGEST_SIZE])
    if expected_digest is not None and digest != expected_digest:
        raise DigestMismatchError(
            f"{source}: config digest {digest.hex()[:16]}... does not match {expected_digest.hex()[:16]}...")
    pos = 8 + DIGEST_SIZE
    tensors = {}

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise TruncatedPayloadError(f"{source}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = _U32.unpack(take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise LoadError(f"{source}: tensor name is not utf-8") from exc
        if name in tensors:
            raise LoadError(f"{source}: duplicate tensor {name!r}")
        (rank,) = _U32.unpack(take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteDataError(f"{source}: tensor {name!r} holds non-finite values")
        tensors[name] = arr
    return Checkpoint(digest, tensors)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path, expected_digest: bytes | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected_digest, source=str(path))


def model_checkpoint(model, digest: bytes, epoch: int | None = None, velocity=None) -> Checkpoint:
    tensors = {name: p.values for name, p in model.named_params().items()}
    if epoch is not None:
        tensors[EPOCH_KEY] = np.array([epoch], dtype=np.float32)
    for name, v in (velocity or {}).items():
        tensors[VELOCITY_PREFIX + name] = v
    return Checkpoint(digest, tensors)


def restore_params(model, ckpt: Checkpoint) -> None:
    """Copy checkpoint tensors into the model; names and shapes must match exactly."""
    params = model.named_params()
    stored = ckpt.params
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise LoadError(f"checkpoint parameters differ from the model (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        if stored[name].shape != p.values.shape:
            raise LoadError(f"{name}: checkpoint shape {stored[name].shape} != model shape {p.values.shape}")
        p.values[...] = stored[name]
