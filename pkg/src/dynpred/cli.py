"""Command-line driver: ``dynpred {generate,train,eval,predict,plot}``."""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, model_checkpoint, restore_params, save_checkpoint
from .config import RunConfig, format_config, load_config
from .data import make_splits, read_sequences, simulate_gray_scott, simulate_moving_blobs, write_sequences
from .errors import DynpredError, TrainingDivergedError
from .model import Predictor
from .plotting import plot_csv
from .training import HISTORY_COLUMNS, SGD, predict, score, split_io, train

SPLITS = ("train", "val", "test")
EXIT_DIVERGED = 2


def sequence_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def generate_pool(cfg: RunConfig) -> np.ndarray:
    """Every sequence of the train/val/test pool, in generation order."""
    n = cfg.split().total
    if cfg.task == "moving-blobs":
        seqs = [simulate_moving_blobs(cfg.blob_params(sequence_seed(cfg.seed, i)), cfg.seq_len) for i in range(n)]
    else:
        params = cfg.gray_scott_params()
        seqs = [simulate_gray_scott(params, sequence_seed(cfg.seed, i), cfg.seq_len) for i in range(n)]
    return np.stack(seqs) if seqs else np.zeros((0, cfg.seq_len, cfg.channels, cfg.frame_size, cfg.frame_size),
                                                dtype=np.float32)


def generate_splits(cfg: RunConfig) -> dict:
    pool = generate_pool(cfg)
    ranges = make_splits(pool.shape[0], cfg.split())
    return {name: pool[r.start:r.stop] for name, r in zip(SPLITS, ranges)}


def _data_path(cfg: RunConfig, split: str) -> Path:
    return Path(cfg.data_dir) / f"{split}.stds"


def _write_history(path: Path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in records:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def _read_history(path: Path, before_epoch: int):
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [[int(r[0])] + [float(v) for v in r[1:]] for r in rows if r and int(r[0]) < before_epoch]


# -- commands --------------------------------------------------------------


def cmd_generate(cfg: RunConfig, args) -> int:
    out = Path(args.out) if args.out else Path(cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, data in generate_splits(cfg).items():
        write_sequences(out / f"{name}.stds", data)
        print(f"{name}: {data.shape[0]} sequences of shape {tuple(data.shape[1:])} -> {out / f'{name}.stds'}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    train_data = read_sequences(_data_path(cfg, "train"))
    val_path = _data_path(cfg, "val")
    val_data = read_sequences(val_path) if val_path.exists() else None
    model = Predictor(cfg.model_config())
    tcfg = cfg.train_config()
    opt = SGD(model.named_params(), tcfg.lr, tcfg.momentum)
    start = 0
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint, cfg.digest())
        restore_params(model, ckpt)
        start = ckpt.epoch + 1 if ckpt.epoch is not None else 0
        if opt.velocity is not None:
            for name, v in ckpt.velocity.items():
                opt.velocity[name][...] = v
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    history_path = out / "history.csv"
    rows = _read_history(history_path, start)
    ckpt_path = out / "checkpoint.stck"

    def on_epoch(record):
        rows.append(record.row())
        _write_history(history_path, rows)
        r = record.loss
        print(f"epoch {record.epoch}: total {r.total:.6f} (of {r.l_of:.5f}, vq {r.l_vq:.5f}, mse {r.l_mse:.6f})"
              f" val_mse {record.val_mse:.6f}", flush=True)
        if (record.epoch + 1) % cfg.checkpoint_every == 0 or record.epoch + 1 == tcfg.epochs:
            save_checkpoint(ckpt_path, model_checkpoint(model, cfg.digest(), record.epoch, opt.velocity))

    try:
        train(model, train_data, tcfg, val_data, start_epoch=start, on_epoch=on_epoch, optimizer=opt)
    except TrainingDivergedError as exc:
        _write_history(history_path, rows)
        print(f"training diverged at epoch {exc.epoch}, batch {exc.batch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {history_path} and {ckpt_path}")
    return 0


def _fmt_metric(v: float) -> str:
    return "undefined" if math.isnan(v) else f"{v:.6f}"


def cmd_eval(cfg: RunConfig, args) -> int:
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    model = None
    if not args.oracle:
        if not args.checkpoint:
            raise DynpredError("eval needs --checkpoint (or --oracle)")
        ckpt = load_checkpoint(args.checkpoint, cfg.digest())   # digest check before any work
        model = Predictor(cfg.model_config())
        restore_params(model, ckpt)
    data = read_sequences(_data_path(cfg, args.split))
    x, y = split_io(data, cfg.steps_in, cfg.steps_out)
    pred = y if args.oracle else predict(model, x, batch=cfg.batch, seed=cfg.seed)
    report = score(pred, y, x)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / f"metrics_{args.split}.csv"
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "mse", "ssim", "psnr"])
        for name, *vals in report.rows():
            w.writerow([name] + [_fmt_metric(v) for v in vals])
    frames_path = out / f"per_frame_{args.split}.csv"
    with open(frames_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(report.per_frame)
        w.writerow(["frame"] + keys)
        for k in range(y.shape[1]):
            w.writerow([k + 1] + [repr(float(report.per_frame[c][k])) for c in keys])
    print(f"{'':12s}{'MSE':>12s}{'SSIM':>12s}{'PSNR':>12s}")
    for name, *vals in report.rows():
        print(f"{name:12s}" + "".join(f"{_fmt_metric(v):>12s}" for v in vals))
    print(f"wrote {metrics_path} and {frames_path}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    if not args.checkpoint or not args.input:
        raise DynpredError("predict needs --checkpoint and --input")
    ckpt = load_checkpoint(args.checkpoint, cfg.digest())
    model = Predictor(cfg.model_config())
    restore_params(model, ckpt)
    inputs = read_sequences(args.input)
    pred = predict(model, inputs, batch=cfg.batch, seed=cfg.seed)
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.stds"
    write_sequences(path, pred)
    print(f"wrote {pred.shape[0]} x {pred.shape[1]} predicted frames to {path}")
    return 0


def cmd_plot(cfg: RunConfig | None, args) -> int:
    out = Path(args.out) if args.out else Path(args.input).parent
    for path in plot_csv(args.input, out):
        print(path)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynpred", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="STCK checkpoint (train: resume from it)")
        p.add_argument("--split", choices=SPLITS, default="test")
        if name == "eval":
            p.add_argument("--oracle", action="store_true", help="score the targets against themselves")
        if name in ("predict", "plot"):
            p.add_argument("--input", required=name == "plot",
                           help="input STDS file" if name == "predict" else "CSV file to plot")
    return parser


def _thread_limit():
    value = os.environ.get("STDS_THREADS")
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = None
        if args.command != "plot" or args.config:
            cfg = load_config(args.config) if args.config else RunConfig().validate()
            if args.seed is not None:
                cfg = cfg.replace(seed=args.seed).validate()
        with _thread_limit():
            return COMMANDS[args.command](cfg, args)
    except (DynpredError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
