"""
Codebank lookup and flow warping
================================

Latent vectors snap to their nearest codeword; the expert sees ``Z + Zq``.
Flows displace sampling positions: ``u`` moves along rows, ``v`` along
columns, and the warping residual is the flow loss.
"""
import numpy as np

from dynpred.codebank import Codebank, VQLossConfig, fuse_quantized, quantize, usage_stats, vq_loss
from dynpred.flow import flow_loss, warp

codes = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
z = np.array([[1.2, 0.0], [1.0, 0.0], [0.1, 2.0]])
r = quantize(z, Codebank(codes))
print("indices", r.indices.tolist())          # (1, 0, 2): the tie at (1, 0) goes to the lower index
print("Z + Zq", fuse_quantized(z, r).tolist())
loss, grad_z, grad_codes = vq_loss(z, r, VQLossConfig(beta=0.99))
print(f"vq loss {loss:.4f}")
print("code usage", usage_stats(r, 3))

field = np.array([[0.0, 1.0], [2.0, 3.0]])
print("u=1 ->", warp(field, np.ones((2, 2)), np.zeros((2, 2))).tolist())
print("u=0.5 ->", warp(field, np.full((2, 2), 0.5), np.zeros((2, 2))).tolist())
print("v=1 ->", warp(field, np.zeros((2, 2)), np.ones((2, 2))).tolist())

# a bright pixel moving one column right per frame: the matching flow zeroes the residual
seq = np.zeros((3, 1, 6, 6))
for t in range(3):
    seq[t, 0, 2, 1 + t] = 1.0
still = np.zeros((2, 2, 6, 6))
moving = still.copy()
moving[:, 1] = 1.0                          # sample frame t+1 one column to the right
print(f"flow loss, zero flow {flow_loss(seq, seq, still)[0]:.4f}, matching flow {flow_loss(seq, seq, moving)[0]:.4f}")
