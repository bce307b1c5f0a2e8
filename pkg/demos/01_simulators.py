"""
Synthetic dynamics
==================

Two data sources: a Gray-Scott reaction-diffusion grid and bouncing blobs.
Both produce ``(T, C, H, W)`` float32 sequences in [0, 1].
"""
from pathlib import Path

import numpy as np

from dynpred.data import (BlobSceneParams, GrayScottParams, read_sequences, simulate_gray_scott,
                          simulate_moving_blobs, write_sequences)

out = Path("demo_output")
out.mkdir(exist_ok=True)

# Gray-Scott: u and v channels, a pattern grows out of a seeded centre patch
# (on grids much below 48x48 the patch is too small and decays to rest)
gs = simulate_gray_scott(GrayScottParams(), seed=0, T=6)
print("gray-scott", gs.shape, gs.dtype, "u range", gs[:, 0].min().round(3), gs[:, 0].max().round(3))
print("spatial variance of u per frame", gs[:, 0].var(axis=(1, 2)).round(5))

# blobs: Gaussian discs moving in straight lines, reflecting off the walls
blobs = simulate_moving_blobs(BlobSceneParams(n_blobs=2, radius=6.0, speed=3.0, seed=1), T=20)
print("blobs", blobs.shape, "mean intensity", float(blobs.mean()).__round__(4))

# the centre of mass moves by about `speed` pixels per frame
rows, cols = np.mgrid[:64, :64]
mass = blobs[:, 0].sum(axis=(1, 2))
centre = np.stack([(blobs[:, 0] * rows).sum(axis=(1, 2)) / mass, (blobs[:, 0] * cols).sum(axis=(1, 2)) / mass], 1)
print("first centres of mass", centre[:3].round(2).tolist())

# STDS files round-trip bit-exactly
write_sequences(out / "blobs.stds", blobs[None])
assert read_sequences(out / "blobs.stds")[0].tobytes() == blobs.tobytes()
print("wrote", out / "blobs.stds")
