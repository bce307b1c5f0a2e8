"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, unknown keys are rejected.
Every key has a typed default, so an empty file is a valid config.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .codebank import BANK_SIZES
from .data import BlobSceneParams, DatasetSplit, GrayScottParams
from .decoder import DECODER_FORMS, DecoderConfig
from .encoder import SIZE_PRESETS, CropConfig
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

TASKS = ("moving-blobs", "gray-scott")
TASK_CHANNELS = {"moving-blobs": 1, "gray-scott": 2}

# keys that change parameter shapes or the meaning of stored weights
ARCHITECTURE_KEYS = (
    "task", "frame_size", "steps_in", "steps_out", "size", "codebank", "global_kernel", "local_kernel",
    "down_floor", "flow_channels", "decoder_form", "decoder_depth", "decoder_channels", "n_crops", "crop_out",
    "use_local", "use_codebank",
)


@dataclass(frozen=True)
class RunConfig:
    # data
    task: str = "moving-blobs"
    data_dir: str = "data"
    frame_size: int = 64
    seq_len: int = 20
    n_train: int = 200
    n_val: int = 40
    n_test: int = 40
    blob_count: int = 2
    blob_radius: float = 6.0
    blob_speed: float = 3.0
    gs_du: float = 0.16
    gs_dv: float = 0.08
    gs_feed: float = 0.055
    gs_kill: float = 0.062
    gs_dt: float = 1.0
    gs_steps_per_frame: int = 10
    gs_warmup: int = 500
    # model
    steps_in: int = 10
    steps_out: int = 10
    size: str = "S"
    codebank: str = "256x64"
    global_kernel: int = 7
    local_kernel: int = 3
    down_floor: int = 8
    flow_channels: int = 16
    decoder_form: str = "DC"
    decoder_depth: int = 3
    decoder_channels: str = ""
    n_crops: int = 3
    crop_out: int = 32
    crop_max_area: float = 0.5
    beta: float = 0.99
    use_local: bool = True
    use_codebank: bool = True
    use_flow_loss: bool = True
    flow_on_output: bool = False
    weight_of: float = 1.0
    weight_vq: float = 1.0
    weight_mse: float = 1.0
    output_bias: float = 0.0
    # training
    lr: float = 0.01
    momentum: float = 0.0
    epochs: int = 50
    batch: int = 16
    seed: int = 0
    checkpoint_every: int = 10
    out_dir: str = "runs"

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.size not in SIZE_PRESETS:
            raise ConfigurationError(f"size must be one of {sorted(SIZE_PRESETS)}, got {self.size!r}")
        if self.codebank not in BANK_SIZES:
            raise ConfigurationError(f"codebank must be one of {sorted(BANK_SIZES)}, got {self.codebank!r}")
        if self.decoder_form not in DECODER_FORMS:
            raise ConfigurationError(f"decoder_form must be one of {DECODER_FORMS}")
        if self.seq_len < self.steps_in + self.steps_out:
            raise ConfigurationError("seq_len must cover steps_in + steps_out")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")
        self.model_config().validate()
        self.train_config().validate()
        return self

    # -- derived configs ----------------------------------------------------

    @property
    def channels(self) -> int:
        return TASK_CHANNELS[self.task]

    def decoder_config(self) -> DecoderConfig:
        widths = None
        if self.decoder_channels.strip():
            try:
                widths = tuple(int(c) for c in self.decoder_channels.split(","))
            except ValueError as exc:
                raise ConfigurationError(f"decoder_channels must be comma-separated ints: {exc}") from exc
        return DecoderConfig(self.decoder_form, self.decoder_depth, widths)

    def model_config(self) -> ModelConfig:
        bank_size, code_dim = BANK_SIZES[self.codebank]
        return ModelConfig(
            in_channels=self.channels, frame_size=self.frame_size, steps_in=self.steps_in,
            steps_out=self.steps_out, size=self.size, bank_size=bank_size, code_dim=code_dim,
            global_kernel=self.global_kernel, local_kernel=self.local_kernel, down_floor=self.down_floor,
            flow_channels=self.flow_channels, decoder=self.decoder_config(),
            crops=CropConfig(self.n_crops, self.crop_out, self.crop_max_area, self.seed),
            beta=self.beta, use_local=self.use_local, use_codebank=self.use_codebank,
            use_flow_loss=self.use_flow_loss, flow_on_output=self.flow_on_output,
            weight_of=self.weight_of, weight_vq=self.weight_vq, weight_mse=self.weight_mse,
            output_bias=self.output_bias, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.epochs, self.batch, self.seed, self.momentum)

    def split(self) -> DatasetSplit:
        return DatasetSplit(self.n_train, self.n_val, self.n_test)

    def gray_scott_params(self) -> GrayScottParams:
        return GrayScottParams(Du=self.gs_du, Dv=self.gs_dv, F=self.gs_feed, k=self.gs_kill, dt=self.gs_dt,
                               steps_per_frame=self.gs_steps_per_frame,
                               grid=(self.frame_size, self.frame_size), warmup=self.gs_warmup)

    def blob_params(self, seed: int) -> BlobSceneParams:
        return BlobSceneParams(self.blob_count, self.blob_radius, self.blob_speed,
                               (self.frame_size, self.frame_size), seed)

    def digest(self) -> bytes:
        """sha256 over the architecture keys; stored in checkpoints."""
        text = "".join(f"{k}={_format(getattr(self, k))}\n" for k in ARCHITECTURE_KEYS)
        return hashlib.sha256(text.encode("utf-8")).digest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_value(name: str, kind, text: str, line: int):
    if kind in (bool, "bool"):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigurationError(f"line {line}: {name} expects a boolean, got {text!r}")
    conv = {"int": int, "float": float, "str": str}.get(kind, kind)
    try:
        return conv(text)
    except ValueError as exc:
        raise ConfigurationError(f"line {line}: {name} expects {conv.__name__}, got {text!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, types[key], value, lineno)
    return dataclasses.replace(base or RunConfig(), **values).validate()


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(RunConfig))


def preset(size: str, **overrides) -> RunConfig:
    """The ours-S/B/L bundles differ only in encoder depth."""
    return RunConfig(size=size, **overrides).validate()
