"""End-to-end runs: warm-ups, gap-based selection, training and inference.

`run_mash` executes the full adaptive procedure on one noisy image: two
warm-up trainings at the low/high masking ratios produce converged noise
estimates whose gap selects the final masking ratio and decides whether the
training target is shuffled; the final model trains from scratch and the
output is an ensemble of masked predictions.  `run_baseline` is the fixed
ratio variant used for comparisons and sweeps.

Non-divisible input sizes are handled by reflective padding to the next
multiple of the network's downsampling factor; all training happens on the
padded domain and outputs/metrics are cropped back.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from mash import seeds
from mash.image_io import as_image
from mash.metrics import psnr, ssim
from mash.network import OptimState, init_model
from mash.shuffle import flatness_map, local_shuffle
from mash.training import (
    GapReport,
    MashConfig,
    TrainTrace,
    ensemble_predict,
    estimation_gap,
    select_tau,
    train_run,
)

# ensemble stream contexts: pseudo-clean at the split point vs final output
_ENSEMBLE_PSEUDO_CLEAN = 0
_ENSEMBLE_OUTPUT = 1


@dataclass
class RunReport:
    """Everything needed to inspect or replay one run."""

    input_desc: dict
    seed: int
    config: dict
    gap: GapReport | None = None
    loss_trace: list = field(default_factory=list)
    sigma_trace: dict = field(default_factory=dict)
    metrics: dict | None = None
    shuffle_info: dict | None = None
    wall_clock: float = 0.0
    model: object = None  # trained network; not serialized

    def to_dict(self) -> dict:
        out = {
            "input": self.input_desc,
            "seed": self.seed,
            "config": self.config,
            "loss_trace": self.loss_trace,
            "sigma_trace": self.sigma_trace,
            "metrics": self.metrics,
            "shuffle_info": self.shuffle_info,
            "wall_clock": self.wall_clock,
        }
        if self.gap is not None:
            out["gap"] = {
                "sigma_low": self.gap.sigma_low,
                "sigma_high": self.gap.sigma_high,
                "epsilon": self.gap.epsilon,
                "tau_optimal": self.gap.tau_optimal,
                "shuffle_enabled": self.gap.shuffle_enabled,
            }
        return out


def pad_to_multiple(img, multiple: int):
    """Reflect-pad bottom/right to the next multiple; returns (padded, (h, w))."""
    img = as_image(img)
    h, w, _ = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    out = img
    # np.pad reflect caps the pad at size-1 per call; iterate for tiny images
    while ph or pw:
        ch, cw = out.shape[0], out.shape[1]
        step_h = min(ph, ch - 1)
        step_w = min(pw, cw - 1)
        out = np.pad(out, ((0, step_h), (0, step_w), (0, 0)), mode="reflect")
        ph -= step_h
        pw -= step_w
    return out, (h, w)


def _crop(img, size):
    return img[: size[0], : size[1], :]


def _warmup(y_pad, tau: float, phase: int, cfg: MashConfig) -> TrainTrace:
    model = init_model(cfg.net, seeds.stream_rng(cfg.seed, seeds.STREAM_INIT, phase))
    opt = OptimState.for_model(model, cfg.base_lr, cfg.warmup_iters, cfg.floor_lr)
    mask_rng = seeds.stream_rng(cfg.seed, seeds.STREAM_TRAIN_MASKS, phase)
    return train_run(model, opt, y_pad, y_pad, tau, cfg.warmup_iters, mask_rng)


def measure_gap(y_pad, cfg: MashConfig):
    """Two warm-up runs; returns (GapReport, trace_low, trace_high)."""
    trace_low = _warmup(y_pad, cfg.tau_low, seeds.PHASE_WARMUP_LOW, cfg)
    trace_high = _warmup(y_pad, cfg.tau_high, seeds.PHASE_WARMUP_HIGH, cfg)
    sigma_low = trace_low.converged_sigma(cfg.sigma_window)
    sigma_high = trace_high.converged_sigma(cfg.sigma_window)
    eps = estimation_gap(sigma_high, sigma_low)
    tau_opt, shuffle = select_tau(eps, cfg)
    gap = GapReport(
        sigma_low=sigma_low,
        sigma_high=sigma_high,
        epsilon=eps,
        tau_optimal=tau_opt,
        shuffle_enabled=shuffle,
        seed=cfg.seed,
    )
    return gap, trace_low, trace_high


def _train_final(y_pad, tau: float, use_shuffle: bool, cfg: MashConfig):
    """Final training phase; returns (model, trace, shuffle_info)."""
    model = init_model(cfg.net, seeds.stream_rng(cfg.seed, seeds.STREAM_INIT, seeds.PHASE_FINAL))
    opt = OptimState.for_model(model, cfg.base_lr, cfg.iters, cfg.floor_lr)
    mask_rng = seeds.stream_rng(cfg.seed, seeds.STREAM_TRAIN_MASKS, seeds.PHASE_FINAL)
    shuffle_info = None
    if not use_shuffle:
        trace = train_run(model, opt, y_pad, y_pad, tau, cfg.iters, mask_rng)
    else:
        trace = train_run(model, opt, y_pad, y_pad, tau, cfg.split_iter, mask_rng)
        pseudo_clean = ensemble_predict(
            model,
            y_pad,
            tau,
            cfg.ensemble_size,
            seeds.stream_rng(cfg.seed, seeds.STREAM_ENSEMBLE, _ENSEMBLE_PSEUDO_CLEAN),
        )
        fmap = flatness_map(pseudo_clean, cfg.tile_size, cfg.flat_threshold)
        shuffled = local_shuffle(
            y_pad, fmap, seeds.stream_rng(cfg.seed, seeds.STREAM_SHUFFLE)
        )
        shuffle_info = {
            "flat_fraction": fmap.flat_fraction,
            "split_iter": cfg.split_iter,
        }
        tail = train_run(
            model, opt, y_pad, shuffled.image, tau, cfg.iters - cfg.split_iter, mask_rng
        )
        trace = TrainTrace(
            losses=trace.losses + tail.losses, sigmas=trace.sigmas + tail.sigmas
        )
    return model, trace, shuffle_info


def _finish(model, y_pad, orig_size, tau, cfg):
    out_pad = ensemble_predict(
        model,
        y_pad,
        tau,
        cfg.ensemble_size,
        seeds.stream_rng(cfg.seed, seeds.STREAM_ENSEMBLE, _ENSEMBLE_OUTPUT),
    )
    return _crop(out_pad, orig_size)


def _metrics_vs(clean, denoised) -> dict:
    vals = {"psnr": psnr(clean, denoised)}
    if min(denoised.shape[0], denoised.shape[1]) >= 11:
        vals["ssim"] = ssim(clean, denoised)
    return vals


def run_mash(y, cfg: MashConfig, clean=None, input_desc: dict | None = None):
    """Full adaptive run on one noisy image; returns (denoised, RunReport)."""
    started = time.perf_counter()
    y = as_image(y, min_size=8)
    y_pad, orig_size = pad_to_multiple(y, cfg.net.spatial_multiple)

    gap, trace_low, trace_high = measure_gap(y_pad, cfg)
    model, trace, shuffle_info = _train_final(y_pad, gap.tau_optimal, gap.shuffle_enabled, cfg)
    denoised = _finish(model, y_pad, orig_size, gap.tau_optimal, cfg)

    report = RunReport(
        input_desc=dict(input_desc or {}, shape=list(y.shape)),
        seed=cfg.seed,
        config=cfg.snapshot(),
        gap=gap,
        loss_trace=trace.losses,
        sigma_trace={
            "warmup_low": trace_low.sigmas,
            "warmup_high": trace_high.sigmas,
            "final": trace.sigmas,
        },
        metrics=None if clean is None else _metrics_vs(as_image(clean), denoised),
        shuffle_info=shuffle_info,
        wall_clock=time.perf_counter() - started,
        model=model,
    )
    return denoised, report


def run_baseline(y, tau: float, cfg: MashConfig, clean=None, lps: bool = False,
                 input_desc: dict | None = None):
    """Fixed-ratio run (no warm-ups, no gap); `lps` adds the shuffled target."""
    started = time.perf_counter()
    y = as_image(y, min_size=8)
    y_pad, orig_size = pad_to_multiple(y, cfg.net.spatial_multiple)

    model, trace, shuffle_info = _train_final(y_pad, tau, lps, cfg)
    denoised = _finish(model, y_pad, orig_size, tau, cfg)

    report = RunReport(
        input_desc=dict(input_desc or {}, shape=list(y.shape), tau=tau, lps=lps),
        seed=cfg.seed,
        config=cfg.snapshot(),
        gap=None,
        loss_trace=trace.losses,
        sigma_trace={"final": trace.sigmas},
        metrics=None if clean is None else _metrics_vs(as_image(clean), denoised),
        shuffle_info=shuffle_info,
        wall_clock=time.perf_counter() - started,
        model=model,
    )
    return denoised, report


def converged_sigma_of(report: RunReport, which: str = "final") -> float:
    """Trailing-window mean of a recorded sigma trace."""
    trace = report.sigma_trace[which]
    window = int(report.config.get("sigma_window", 50))
    return float(np.mean(trace[-window:]))


def derive_cell_seed(root_seed: int, *key: int) -> int:
    """Stable per-cell seed derived from the root seed and grid coordinates."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def cell_config(cfg: MashConfig, *key: int) -> MashConfig:
    return replace(cfg, seed=derive_cell_seed(cfg.seed, *key))
