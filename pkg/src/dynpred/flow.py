"""Flow experts: per-transition flow estimation, linear projection of the
expert inputs, and the warping loss that ties the two together.

Flow convention: channel 0 (``u``) displaces the *row* index and channel 1
(``v``) the *column* index, i.e. ``warped[i, j] = I_next[i + u, j + v]``.
Many optical-flow codebases use the opposite order.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError
from .layers import Conv2d, Deconv2d, ReLU, Sequential, collect_params, upsample_deconv
from .numerics import bilinear_gather, bilinear_gather_backward


def _as_batch(x: np.ndarray) -> np.ndarray:
    # (T, C, h, w) -> (1, T, C, h, w)
    return x[None] if x.ndim == 4 else x


class FlowExpert:
    """Conv feature extractor, deconv upsampler and a flow head.

    Input: ``(B*T, C_in, h, w)`` latent frames. Output: projected features
    ``(B, T, C_flow, h * 2**n_up, w * 2**n_up)`` and flows
    ``(B, T-1, 2, same spatial size)``.
    """

    def __init__(self, in_ch, flow_ch, kernel, n_up, *, rng, dtype=np.float32, flow_init_gain=0.1):
        self.flow_ch = flow_ch
        self.features = Sequential([
            ("conv0", Conv2d(in_ch, flow_ch, kernel, rng=rng, dtype=dtype)),
            ("act0", ReLU()),
            ("conv1", Conv2d(flow_ch, flow_ch, kernel, rng=rng, dtype=dtype)),
            ("act1", ReLU()),
        ])
        up = []
        for i in range(n_up):
            up.append((f"up{i}", upsample_deconv(flow_ch, flow_ch, rng=rng, dtype=dtype)))
            up.append((f"up_act{i}", ReLU()))
        up.append(("out", Deconv2d(flow_ch, flow_ch, 3, 1, 1, rng=rng, dtype=dtype)))
        self.upsample = Sequential(up)
        self.head = Conv2d(2 * flow_ch, 2, 3, rng=rng, dtype=dtype, init_gain=flow_init_gain)
        self._bt = None

    def named_params(self):
        return collect_params([("features", self.features), ("upsample", self.upsample), ("flow_head", self.head)])

    def forward(self, z: np.ndarray, steps: int, with_flow: bool = True):
        if z.shape[0] % steps:
            raise DimensionError(f"{z.shape[0]} frames do not split into sequences of {steps}")
        if steps < 2 and with_flow:
            raise ConfigurationError("flow estimation needs at least 2 steps")
        b = z.shape[0] // steps
        proj = self.upsample.forward(self.features.forward(z))
        _, c, h, w = proj.shape
        proj = proj.reshape(b, steps, c, h, w)
        self._bt = (b, steps)
        if not with_flow:
            return proj, None
        pairs = np.concatenate([proj[:, :-1], proj[:, 1:]], axis=2).reshape(b * (steps - 1), 2 * c, h, w)
        flows = self.head.forward(pairs).reshape(b, steps - 1, 2, h, w)
        return proj, flows

    def backward(self, d_proj: np.ndarray, d_flows: np.ndarray | None = None) -> np.ndarray:
        b, steps = self._bt
        d_proj = d_proj.copy()
        c = self.flow_ch
        if d_flows is not None:
            h, w = d_flows.shape[-2:]
            d_pairs = self.head.backward(d_flows.reshape(b * (steps - 1), 2, h, w))
            d_pairs = d_pairs.reshape(b, steps - 1, 2 * c, h, w)
            d_proj[:, :-1] += d_pairs[:, :, :c]
            d_proj[:, 1:] += d_pairs[:, :, c:]
        d = d_proj.reshape((b * steps,) + d_proj.shape[2:])
        return self.features.backward(self.upsample.backward(d))


def estimate_flow(features: np.ndarray, expert: FlowExpert):
    """Projected features and flows for one ``(T, C, h, w)`` latent sequence."""
    proj, flows = expert.forward(features, features.shape[0])
    return proj[0], flows[0]


class LinearProjection:
    """1x1 conv plus linear 2x deconvs mapping expert inputs to the expert output space."""

    def __init__(self, in_ch, flow_ch, n_up, *, rng, dtype=np.float32):
        layers = [("conv", Conv2d(in_ch, flow_ch, 1, rng=rng, dtype=dtype))]
        for i in range(n_up):
            layers.append((f"up{i}", upsample_deconv(flow_ch, flow_ch, rng=rng, dtype=dtype)))
        self.net = Sequential(layers)
        self._bt = None

    def named_params(self):
        return self.net.named_params()

    def forward(self, z: np.ndarray, steps: int) -> np.ndarray:
        b = z.shape[0] // steps
        y = self.net.forward(z)
        self._bt = (b, steps)
        return y.reshape((b, steps) + y.shape[1:])

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.net.backward(dy.reshape((-1,) + dy.shape[2:]))


def linear_projection(pre_expert_features: np.ndarray, projection: LinearProjection) -> np.ndarray:
    """Project one ``(T, C, h, w)`` sequence to ``(T, C_flow, H~, W~)``."""
    return projection.forward(pre_expert_features, pre_expert_features.shape[0])[0]


def warp_batch(fields: np.ndarray, flows: np.ndarray):
    """Warp ``(N, C, h, w)`` fields by ``(N, 2, h, w)`` flows; returns ``(warped, cache)``."""
    n, _, h, w = fields.shape
    if flows.shape != (n, 2, h, w):
        raise DimensionError(f"flows must be {(n, 2, h, w)}, got {flows.shape}")
    ii = np.arange(h, dtype=flows.dtype)[:, None]
    jj = np.arange(w, dtype=flows.dtype)[None, :]
    return bilinear_gather(fields, ii + flows[:, 0], jj + flows[:, 1])


def warp(i_next: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``warped[i, j] = I_next(i + u[i, j], j + v[i, j])`` with border clamp."""
    i_next = np.asarray(i_next, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (i_next.shape == u.shape == v.shape):
        raise DimensionError("field and displacement maps must share a shape")
    out, _ = warp_batch(i_next[None, None], np.stack([u, v])[None])
    return out[0, 0]


def flow_loss(proj: np.ndarray, expert_proj: np.ndarray, flows: np.ndarray):
    """Mean absolute warping residual ``|I_t - warp(I_{t+1}, flow_t)|``.

    ``proj`` supplies ``I`` (the linear-projection branch) and ``flows`` come
    from the expert; ``expert_proj`` must match ``proj`` in shape. Accepts a
    single sequence ``(T, C, h, w)`` or a batch ``(B, T, C, h, w)``. Returns
    ``(loss, cache)`` for :func:`flow_loss_backward`.
    """
    single = proj.ndim == 4
    proj, expert_proj, flows = _as_batch(proj), _as_batch(expert_proj), _as_batch(flows)
    if proj.shape != expert_proj.shape:
        raise DimensionError(f"projection {proj.shape} and expert output {expert_proj.shape} differ")
    b, t, c, h, w = proj.shape
    if t < 2:
        raise ConfigurationError("flow loss needs at least two steps")
    if flows.shape != (b, t - 1, 2, h, w):
        raise DimensionError(f"flows must be {(b, t - 1, 2, h, w)}, got {flows.shape}")
    current = proj[:, :-1].reshape(b * (t - 1), c, h, w)
    nxt = proj[:, 1:].reshape(b * (t - 1), c, h, w)
    warped, gather_cache = warp_batch(nxt, flows.reshape(b * (t - 1), 2, h, w))
    diff = current - warped
    loss = float(np.abs(diff).mean(dtype=np.float64))
    return loss, (diff, gather_cache, proj.shape, single)


def flow_loss_backward(cache, scale: float = 1.0):
    """Gradients of ``scale * loss`` with respect to ``proj`` and ``flows``."""
    diff, gather_cache, shape, single = cache
    b, t, c, h, w = shape
    g = np.sign(diff) * (scale / diff.size)
    g = g.astype(diff.dtype, copy=False)
    d_next, d_rows, d_cols = bilinear_gather_backward(-g, gather_cache)
    d_proj = np.zeros(shape, dtype=diff.dtype)
    d_proj[:, :-1] += g.reshape(b, t - 1, c, h, w)
    d_proj[:, 1:] += d_next.reshape(b, t - 1, c, h, w)
    d_flows = np.stack([d_rows, d_cols], axis=1).reshape(b, t - 1, 2, h, w)
    if single:
        return d_proj[0], d_flows[0]
    return d_proj, d_flows
