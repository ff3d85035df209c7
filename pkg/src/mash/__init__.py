"""Single-image blind-spot denoising with adaptive masking and local pixel shuffling.

The package trains a small convolutional encoder-decoder on one noisy image at
a time (test-time training).  The masking ratio of the blind-spot loss is
selected automatically from a noise-level-estimation gap measured with two
warm-up runs, and a local pixel shuffling step de-correlates structured noise
inside flat regions before the final training phase.  A synthetic
correlated-noise laboratory and a sweep/audit harness are included.
"""

from mash.errors import DivergenceError, ImageFormatError
from mash.image_io import downscale, load_image, save_image
from mash.metrics import psnr, ssim
from mash.noise import NoiseModel, add_noise, sample_noise_exact, sample_noise_fast
from mash.network import NetConfig, cosine_lr, count_parameters, init_model
from mash.training import (
    GapReport,
    MashConfig,
    ensemble_predict,
    estimation_gap,
    sample_mask,
    select_tau,
)
from mash.shuffle import FlatnessMap, ShuffledImage, flatness_map, local_shuffle
from mash.pipeline import RunReport, run_baseline, run_mash
from mash.harness import SweepSpec, gap_curves, masking_accuracy_audit, sweep
from mash.estimators import BaselineDenoiser, MashDenoiser

__version__ = "0.1.0"

__all__ = [
    "BaselineDenoiser",
    "DivergenceError",
    "FlatnessMap",
    "GapReport",
    "ImageFormatError",
    "MashConfig",
    "MashDenoiser",
    "NetConfig",
    "NoiseModel",
    "RunReport",
    "ShuffledImage",
    "SweepSpec",
    "add_noise",
    "cosine_lr",
    "count_parameters",
    "downscale",
    "ensemble_predict",
    "estimation_gap",
    "flatness_map",
    "gap_curves",
    "init_model",
    "load_image",
    "local_shuffle",
    "masking_accuracy_audit",
    "psnr",
    "run_baseline",
    "run_mash",
    "sample_mask",
    "sample_noise_exact",
    "sample_noise_fast",
    "save_image",
    "select_tau",
    "ssim",
    "sweep",
]
