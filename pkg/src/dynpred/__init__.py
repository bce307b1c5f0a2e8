"""Spatio-temporal dynamics prediction with vector-quantised latents and flow experts, in numpy."""
from .codebank import Codebank, quantize, straight_through, vq_loss
from .config import RunConfig, load_config, parse_config
from .data import (
    BlobSceneParams,
    DatasetSplit,
    GrayScottParams,
    make_splits,
    read_sequences,
    simulate_gray_scott,
    simulate_moving_blobs,
    write_sequences,
)
from .decoder import DecoderConfig, decode, fuse
from .flow import estimate_flow, flow_loss, linear_projection, warp
from .metrics import mse_loss, persistence_baseline, psnr, ssim, total_loss
from .model import ModelConfig, Predictor
from .numerics import DiffArray, finite_diff_check
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
