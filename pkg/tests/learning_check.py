"""Shared runner for the scaled-down learning check and its ablations.

Each run trains the predictor on the moving-blobs task and scores the test
split. Results are cached under ``.cache/learning_check`` keyed by a hash of
the run config and of every source file of the package, so a cached result
is only reused for byte-identical code and settings.

Run ``python tests/learning_check.py`` to populate the cache ahead of pytest.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

import dynpred
from dynpred.cli import generate_splits
from dynpred.config import RunConfig, format_config
from dynpred.model import Predictor
from dynpred.training import evaluate, train

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / ".cache" / "learning_check"

BASE = RunConfig(task="moving-blobs", frame_size=64, n_train=200, n_val=40, n_test=40, steps_in=10,
                 steps_out=10, size="S", codebank="128x32", lr=0.01, momentum=0.0, batch=16, epochs=50, seed=0)

VARIANTS = {
    "full": {},
    "no_local": {"use_local": False},
    "no_codebank": {"use_codebank": False},
    "no_flow_loss": {"use_flow_loss": False},
}


def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(dynpred.__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run_key(cfg: RunConfig) -> str:
    return hashlib.sha256((format_config(cfg) + _source_hash()).encode()).hexdigest()[:20]


def trivial_predictors(cfg: RunConfig = BASE) -> dict:
    """Scores of constant predictors on the test split, for context."""
    from dynpred.training import score, split_io

    test = generate_splits(cfg)["test"]
    x, y = split_io(test, cfg.steps_in, cfg.steps_out)
    mean = float(generate_splits(cfg)["train"].mean())
    out = {}
    for name, value in (("zeros", 0.0), ("train_mean", mean)):
        r = score(np.full_like(y, value), y, x)
        out[name] = {"mse": r.mse, "ssim": r.ssim}
    return out


def run(variant: str, *, use_cache: bool = True, log=None) -> dict:
    cfg = BASE.replace(**VARIANTS[variant]).validate()
    key = run_key(cfg)
    path = CACHE / f"{variant}-{key}.json"
    if use_cache and path.exists():
        return json.loads(path.read_text())
    splits = generate_splits(cfg)
    model = Predictor(cfg.model_config())
    start = time.perf_counter()

    def on_epoch(record):
        if log is not None:
            r = record.loss
            print(f"[{variant}] epoch {record.epoch}: of {r.l_of:.5f} vq {r.l_vq:.5f} mse {r.l_mse:.6f} "
                  f"val_mse {record.val_mse:.6f} ({time.perf_counter() - start:.0f}s)", file=log, flush=True)

    history = train(model, splits["train"], cfg.train_config(), splits["val"], on_epoch=on_epoch)
    report = evaluate(model, splits["test"], batch=cfg.batch, seed=cfg.seed)
    result = {
        "variant": variant, "key": key, "config": format_config(cfg),
        "train_seconds": time.perf_counter() - start, "cpu_count": os.cpu_count(),
        "test": {"mse": report.mse, "ssim": report.ssim, "psnr": report.psnr},
        "baseline": {"mse": report.baseline_mse, "ssim": report.baseline_ssim, "psnr": report.baseline_psnr},
        "history": [r.row() for r in history],
    }
    CACHE.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result, indent=1))
    return result


if __name__ == "__main__":
    for name in sys.argv[1:] or list(VARIANTS):
        res = run(name, log=sys.stdout)
        print(json.dumps({k: res[k] for k in ("variant", "train_seconds", "test", "baseline")}), flush=True)
