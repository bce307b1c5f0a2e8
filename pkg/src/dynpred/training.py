"""SGD training loop and split evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, TrainingDivergedError, UndefinedPSNRError
from .metrics import LossReport, mse_loss, persistence_baseline, psnr, ssim_images, total_loss


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 50
    batch: int = 16
    seed: int = 0
    momentum: float = 0.0

    def validate(self):
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ConfigurationError(f"lr must be a finite non-negative number, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    loss: LossReport
    val_mse: float = float("nan")

    def row(self):
        r = self.loss
        return [self.epoch, r.l_of, r.l_vq, r.l_mse, r.total, self.val_mse]


HISTORY_COLUMNS = ["epoch", "l_of", "l_vq", "l_mse", "total", "val_mse"]


class SGD:
    """``w <- w - lr * g`` (optionally with heavy-ball momentum)."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(p.values) for k, p in params.items()} if momentum else None

    def step(self):
        for name, p in self.params.items():
            g = p.grad
            if self.velocity is not None:
                v = self.velocity[name]
                v *= self.momentum
                v += g
                g = v
            p.values -= np.asarray(self.lr * g, dtype=p.values.dtype)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    # one stream per epoch so a resumed run replays the same order and crops
    return np.random.default_rng([seed, epoch])


def split_io(data: np.ndarray, steps_in: int, steps_out: int):
    if data.ndim != 5 or data.shape[1] < steps_in + steps_out:
        raise ConfigurationError(
            f"need (N, >= {steps_in + steps_out}, C, H, W) sequences, got {np.shape(data)}")
    return data[:, :steps_in], data[:, steps_in:steps_in + steps_out]


def train(model, train_data, cfg: TrainConfig, val_data=None, *, start_epoch: int = 0, on_epoch=None,
          optimizer: SGD | None = None):
    """Train ``model`` in place; returns the list of :class:`EpochRecord`.

    Each epoch draws its shuffle and crop streams from ``(seed, epoch)``, so
    running epochs ``[0, E)`` then resuming at ``E`` (with the saved optimiser
    state) matches an uninterrupted run. ``on_epoch(record)`` is called after
    every epoch.
    """
    cfg.validate()
    train_data = np.asarray(train_data)
    if train_data.ndim != 5 or train_data.shape[0] == 0:
        raise ConfigurationError("training set is empty or not (N, T, C, H, W)")
    x_all, y_all = split_io(train_data, model.cfg.steps_in, model.cfg.steps_out)
    params = model.named_params()
    opt = optimizer if optimizer is not None else SGD(params, cfg.lr, cfg.momentum)
    weights = (model.cfg.weight_of, model.cfg.weight_vq, model.cfg.weight_mse)
    history = []
    n = x_all.shape[0]
    for epoch in range(start_epoch, cfg.epochs):
        rng = epoch_rng(cfg.seed, epoch)
        order = rng.permutation(n)
        sums = np.zeros(3)
        count = 0
        for bi, start in enumerate(range(0, n, cfg.batch)):
            idx = order[start:start + cfg.batch]
            x, y = x_all[idx], y_all[idx]
            crops, _ = model.draw_crops(x, rng)
            try:
                _, report = model.forward(x, crops, y)
                model.zero_grad()
                model.backward()
                for p in params.values():
                    if not np.all(np.isfinite(p.grad)):
                        raise TrainingDivergedError("non-finite gradient")
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch=epoch, batch=bi) from exc
            opt.step()
            if not all(np.all(np.isfinite(p.values)) for p in params.values()):
                raise TrainingDivergedError("non-finite parameters after the update", epoch=epoch, batch=bi)
            sums += len(idx) * np.array([report.l_of, report.l_vq, report.l_mse])
            count += len(idx)
        mean = sums / count
        try:
            loss = total_loss(*mean, weights)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(str(exc), epoch=epoch) from exc
        record = EpochRecord(epoch, loss)
        if val_data is not None:
            record.val_mse = evaluate(model, val_data, batch=cfg.batch, seed=cfg.seed).mse
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return history


def predict(model, inputs, *, batch: int = 16, seed: int = 0) -> np.ndarray:
    """``(N, T, C, H, W)`` context -> ``(N, K, C, H, W)`` predictions (fixed crop stream)."""
    inputs = np.asarray(inputs)
    cfg = model.cfg
    if inputs.ndim != 5:
        raise DimensionError(f"expected (N, T, C, H, W), got {inputs.shape}")
    if inputs.shape[1] < cfg.steps_in:
        raise ConfigurationError(f"need at least {cfg.steps_in} context frames, got {inputs.shape[1]}")
    x_all = inputs[:, inputs.shape[1] - cfg.steps_in:]
    rng = np.random.default_rng([seed, 0x5EED])
    out = []
    for start in range(0, x_all.shape[0], batch):
        x = x_all[start:start + batch]
        crops, _ = model.draw_crops(x, rng)
        out.append(model.forward(x, crops))
    return np.concatenate(out).astype(np.float32, copy=False)


@dataclass
class EvalReport:
    mse: float
    ssim: float
    psnr: float
    baseline_mse: float
    baseline_ssim: float
    baseline_psnr: float
    per_frame: dict = field(default_factory=dict)

    def rows(self):
        return [("model", self.mse, self.ssim, self.psnr),
                ("persistence", self.baseline_mse, self.baseline_ssim, self.baseline_psnr)]


def _psnr_or_nan(pred, target):
    try:
        return psnr(pred, target)
    except UndefinedPSNRError:
        return float("nan")


def score(pred, target, context) -> EvalReport:
    """Metrics for predictions against targets, with the persistence row from ``context``.

    MSE and SSIM are means over sequences and frames; PSNR is computed from
    the pooled MSE (NaN when that is zero).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    base = persistence_baseline(context, target.shape[1]).astype(np.float64)
    s_model = ssim_images(pred, target)           # (N, K, C)
    s_base = ssim_images(base, target)
    per_frame = {
        "mse": ((pred - target) ** 2).mean(axis=(0, 2, 3, 4)),
        "ssim": s_model.mean(axis=(0, 2)),
        "baseline_mse": ((base - target) ** 2).mean(axis=(0, 2, 3, 4)),
        "baseline_ssim": s_base.mean(axis=(0, 2)),
    }
    return EvalReport(
        mse=mse_loss(pred, target), ssim=float(s_model.mean()), psnr=_psnr_or_nan(pred, target),
        baseline_mse=mse_loss(base, target), baseline_ssim=float(s_base.mean()),
        baseline_psnr=_psnr_or_nan(base, target), per_frame=per_frame)


def evaluate(model, data, *, batch: int = 16, seed: int = 0) -> EvalReport:
    x, y = split_io(np.asarray(data), model.cfg.steps_in, model.cfg.steps_out)
    return score(predict(model, x, batch=batch, seed=seed), y, x)
