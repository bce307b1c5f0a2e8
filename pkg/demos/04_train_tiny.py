"""
Training a small predictor
==========================

A 16x16 blob task with a trimmed model: train a few epochs, compare with
the persistence baseline, save a checkpoint and plot the loss history.
Takes well under a minute on one CPU.
"""
import csv
from pathlib import Path

import numpy as np

from dynpred.checkpoint import load_checkpoint, model_checkpoint, restore_params, save_checkpoint
from dynpred.data import BlobSceneParams, simulate_moving_blobs
from dynpred.decoder import DecoderConfig
from dynpred.encoder import CropConfig
from dynpred.model import ModelConfig, Predictor
from dynpred.plotting import plot_csv
from dynpred.training import HISTORY_COLUMNS, TrainConfig, evaluate, train

out = Path("demo_output")
out.mkdir(exist_ok=True)


def scenes(first_seed, n):
    return np.stack([simulate_moving_blobs(BlobSceneParams(1, 3.0, 1.0, (16, 16), first_seed + i), 8)
                     for i in range(n)])


train_set, test_set = scenes(0, 32), scenes(1000, 8)
cfg = ModelConfig(frame_size=16, steps_in=4, steps_out=4, bank_size=16, code_dim=8, flow_channels=4,
                  down_floor=4, global_kernel=3, decoder=DecoderConfig("DC", 2, (4, 4)), crops=CropConfig(2, 8))
model = Predictor(cfg)
history = train(model, train_set, TrainConfig(lr=0.01, epochs=6, batch=8, momentum=0.9), test_set,
                on_epoch=lambda r: print(f"epoch {r.epoch}: total {r.loss.total:.4f} mse {r.loss.l_mse:.5f}"))

report = evaluate(model, test_set)
for name, mse, ssim, psnr in report.rows():
    print(f"{name:12s} mse {mse:.5f} ssim {ssim:.4f} psnr {psnr:.2f}")

with open(out / "history.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(HISTORY_COLUMNS)
    w.writerows(r.row() for r in history)
print("plots:", [p.name for p in plot_csv(out / "history.csv", out)])

# checkpoints restore every parameter bit-exactly
digest = bytes(32)
save_checkpoint(out / "tiny.stck", model_checkpoint(model, digest, epoch=history[-1].epoch))
fresh = Predictor(cfg)
restore_params(fresh, load_checkpoint(out / "tiny.stck", digest))
same = all(fresh.named_params()[k].values.tobytes() == p.values.tobytes() for k, p in model.named_params().items())
print("checkpoint restores parameters exactly:", same)
