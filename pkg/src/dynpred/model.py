"""The full predictor: global and local pipelines, shared codebank, flow
experts, fusion and decoder, with an explicit backward pass."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codebank import Codebank, VQLossConfig, fuse_quantized, quantize, straight_through, vq_loss
from .decoder import Decoder, DecoderConfig, fuse, fuse_backward, upsample_nearest, upsample_nearest_backward
from .encoder import CropConfig, Encoder, EncoderConfig, random_local_crops
from .errors import ConfigurationError, DimensionError, TrainingDivergedError
from .flow import FlowExpert, LinearProjection, flow_loss, flow_loss_backward
from .layers import collect_params
from .metrics import total_loss


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    frame_size: int = 64
    steps_in: int = 10
    steps_out: int = 10
    size: str = "S"
    bank_size: int = 256
    code_dim: int = 64
    global_kernel: int = 7
    local_kernel: int = 3
    down_floor: int = 8
    flow_channels: int = 16
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    crops: CropConfig = field(default_factory=CropConfig)
    beta: float = 0.99
    use_local: bool = True
    use_codebank: bool = True
    use_flow_loss: bool = True
    flow_on_output: bool = False
    weight_of: float = 1.0
    weight_vq: float = 1.0
    weight_mse: float = 1.0
    output_bias: float = 0.0
    seed: int = 0

    def validate(self):
        if self.steps_in < 2 or self.steps_out < 1:
            raise ConfigurationError("need steps_in >= 2 and steps_out >= 1")
        if self.flow_on_output and self.steps_in != self.steps_out:
            raise ConfigurationError("flow_on_output reuses input flows and needs steps_in == steps_out")
        VQLossConfig(self.beta).validate()
        self.decoder.validate()
        self.crops.validate()


def _pow2_ratio(big: int, small: int, what: str) -> int:
    n = int(round(math.log2(big / small))) if big >= small else -1
    if n < 0 or small * 2**n != big:
        raise ConfigurationError(f"{what}: cannot upsample {small} to {big} by powers of two")
    return n


class Predictor:
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        side = cfg.frame_size
        self.global_encoder = Encoder(
            EncoderConfig.preset(cfg.size, cfg.global_kernel, cfg.code_dim, cfg.down_floor),
            cfg.in_channels, side, rng=rng, dtype=dtype)
        g_side = self.global_encoder.out_side
        self.latent_side = max(g_side, side // 2**cfg.decoder.depth)
        self.bank = Codebank.uniform(cfg.bank_size, cfg.code_dim, rng, dtype)
        n_up = _pow2_ratio(self.latent_side, g_side, "global expert")
        self.global_expert = FlowExpert(cfg.code_dim, cfg.flow_channels, cfg.global_kernel, n_up, rng=rng, dtype=dtype)
        self.global_proj = LinearProjection(cfg.code_dim, cfg.flow_channels, n_up, rng=rng, dtype=dtype)
        self.local_encoder = self.local_expert = self.local_proj = None
        if cfg.use_local:
            self.local_encoder = Encoder(
                EncoderConfig.preset(cfg.size, cfg.local_kernel, cfg.code_dim, cfg.down_floor),
                cfg.in_channels, cfg.crops.crop_out, rng=rng, dtype=dtype)
            n_up = _pow2_ratio(self.latent_side, self.local_encoder.out_side, "local expert")
            self.local_expert = FlowExpert(cfg.code_dim, cfg.flow_channels, cfg.local_kernel, n_up,
                                           rng=rng, dtype=dtype)
            self.local_proj = LinearProjection(cfg.code_dim, cfg.flow_channels, n_up, rng=rng, dtype=dtype)
        self.decoder = Decoder(cfg.decoder, cfg.flow_channels, self.latent_side, side, cfg.steps_in,
                               cfg.steps_out, cfg.in_channels, rng=rng, dtype=dtype, output_bias=cfg.output_bias)
        self._cache = None

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        children = [("global_encoder", self.global_encoder)]
        if self.cfg.use_codebank:
            children.append(("codebank", self.bank))
        children += [("global_expert", self.global_expert), ("global_proj", self.global_proj)]
        if self.cfg.use_local:
            children += [("local_encoder", self.local_encoder), ("local_expert", self.local_expert),
                         ("local_proj", self.local_proj)]
        children.append(("decoder", self.decoder))
        return collect_params(children)

    def zero_grad(self):
        for p in self.named_params().values():
            p.zero_grad()

    # -- views --------------------------------------------------------------

    def draw_crops(self, x: np.ndarray, rng: np.random.Generator):
        """Random local views for a ``(B, T, C, H, W)`` batch: ``(B, n_crops, T, C, s, s)``."""
        if not self.cfg.use_local:
            return None, None
        crops, boxes = zip(*(random_local_crops(seq, self.cfg.crops, rng) for seq in x))
        return np.stack(crops).astype(self.dtype, copy=False), list(boxes)

    # -- forward / backward -------------------------------------------------

    def _pipeline_forward(self, z, expert, proj_layer, steps):
        cfg = self.cfg
        cache = {"z_shape": z.shape}
        vq = 0.0
        if cfg.use_codebank:
            result = quantize(z, self.bank)
            vq, grad_z, grad_codes = vq_loss(z, result, VQLossConfig(cfg.beta), n_codes=cfg.bank_size)
            cache.update(result=result, grad_z=grad_z, grad_codes=grad_codes)
            expert_in = fuse_quantized(z, result)
        else:
            expert_in = z
        proj, flows = expert.forward(expert_in, steps, with_flow=cfg.use_flow_loss)
        of = 0.0
        if cfg.use_flow_loss:
            if not (np.all(np.isfinite(proj)) and np.all(np.isfinite(flows))):
                raise TrainingDivergedError("non-finite expert output")
            projected = proj_layer.forward(expert_in, steps)
            of, cache["flow"] = flow_loss(projected, proj, flows)
        return proj, flows, of, vq, cache

    def _pipeline_backward(self, d_proj, cache, expert, proj_layer, d_flows_extra=None):
        cfg = self.cfg
        d_flows = None
        d_in = 0
        if cfg.use_flow_loss:
            d_projected, d_flows = flow_loss_backward(cache["flow"], cfg.weight_of)
            if d_flows_extra is not None:
                d_flows = d_flows + d_flows_extra
            d_in = proj_layer.backward(d_projected)
        d_in = d_in + expert.backward(d_proj, d_flows)
        if not cfg.use_codebank:
            return d_in
        # Z + Z_vq: the sum path plus the straight-through copy, plus the commitment term
        dz = d_in + straight_through(None, cache["result"], d_in) + cfg.weight_vq * cache["grad_z"]
        self.bank.codes.grad += cfg.weight_vq * cache["grad_codes"]
        return dz

    def forward(self, x: np.ndarray, crops=None, target=None):
        """Predict ``(B, K, C, H, W)`` frames from ``(B, T, C, H, W)`` inputs.

        ``crops`` are the local views from :meth:`draw_crops` (required when the
        local pipeline is enabled). With ``target`` the loss terms are also
        computed and the state needed by :meth:`backward` is kept.
        """
        cfg = self.cfg
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 5 or x.shape[1:] != (cfg.steps_in, cfg.in_channels, cfg.frame_size, cfg.frame_size):
            raise DimensionError(
                f"expected (B, {cfg.steps_in}, {cfg.in_channels}, {cfg.frame_size}, {cfg.frame_size}), got {x.shape}")
        b, t = x.shape[:2]
        zg = self.global_encoder.forward(x.reshape((b * t,) + x.shape[2:]))
        proj_g, flows_g, of_g, vq_g, cache_g = self._pipeline_forward(zg, self.global_expert, self.global_proj, t)

        locals_, cache_l, of_l, vq_l = [], None, 0.0, 0.0
        if cfg.use_local:
            if crops is None:
                raise ConfigurationError("local pipeline enabled but no crops given")
            crops = np.asarray(crops, dtype=self.dtype)
            n = crops.shape[1]
            zl = self.local_encoder.forward(crops.reshape((b * n * t,) + crops.shape[3:]))
            proj_l, _, of_l, vq_l, cache_l = self._pipeline_forward(zl, self.local_expert, self.local_proj, t)
            proj_l = proj_l.reshape((b, n) + proj_l.shape[1:])
            locals_ = [proj_l[:, h] for h in range(n)]
        fused = fuse(proj_g, locals_)
        pred = self.decoder.forward(fused)
        if target is None:
            return pred

        target = np.asarray(target, dtype=self.dtype)
        if target.shape != pred.shape:
            raise DimensionError(f"target {target.shape} does not match prediction {pred.shape}")
        err = pred - target
        l_mse = float(np.mean(err.astype(np.float64) ** 2))
        of_out, out_cache = 0.0, None
        if cfg.flow_on_output and cfg.use_flow_loss:
            factor = cfg.frame_size // self.latent_side
            big = upsample_nearest(flows_g, factor) * factor
            of_out, out_cache = flow_loss(pred, pred, big)
        l_of = of_g + of_l + of_out
        l_vq = vq_g + vq_l
        report = total_loss(l_of, l_vq, l_mse, (cfg.weight_of, cfg.weight_vq, cfg.weight_mse))
        self._cache = dict(err=err, cache_g=cache_g, cache_l=cache_l, locals_shapes=[p.shape for p in locals_],
                           out_cache=out_cache, b=b, t=t)
        return pred, report

    def backward(self):
        """Accumulate gradients of the last ``forward(..., target=...)`` total loss."""
        cfg = self.cfg
        c = self._cache
        if c is None:
            raise RuntimeError("backward() needs a preceding forward() with a target")
        err = c["err"]
        d_pred = (2.0 * cfg.weight_mse / err.size) * err
        d_flows_g = None
        if c["out_cache"] is not None:
            factor = cfg.frame_size // self.latent_side
            dp1, dp2 = flow_loss_backward(c["out_cache"], cfg.weight_of)
            d_pred = d_pred + dp1
            d_flows_g = upsample_nearest_backward(dp2, factor) * factor
        d_fused = self.decoder.backward(d_pred.astype(self.dtype, copy=False))
        d_proj_g, d_locals = fuse_backward(d_fused, c["locals_shapes"])
        dzg = self._pipeline_backward(d_proj_g, c["cache_g"], self.global_expert, self.global_proj, d_flows_g)
        self.global_encoder.backward(dzg)
        if cfg.use_local:
            b, t = c["b"], c["t"]
            d_proj_l = np.stack(d_locals, axis=1)
            d_proj_l = d_proj_l.reshape((-1,) + d_proj_l.shape[2:])
            dzl = self._pipeline_backward(d_proj_l, c["cache_l"], self.local_expert, self.local_proj)
            self.local_encoder.backward(dzl)
        self._cache = None
