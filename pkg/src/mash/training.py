"""Blind-spot training machinery.

A training step hides a random Bernoulli subset of the input elements, feeds
the masked image through the network and penalizes the squared error at the
hidden positions only.  The per-iteration noise-level estimate (RMS residual
between the masked-input prediction and the noisy image) feeds the
estimation-gap logic that selects the masking ratio, and inference averages
an ensemble of masked predictions.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np
import torch
from numpy.typing import NDArray

from mash.errors import DivergenceError
from mash.image_io import as_image
from mash.network import (
    DenoiserNet,
    NetConfig,
    OptimState,
    adam_step,
    image_to_tensor,
    masked_loss,
    tensor_to_image,
)

ENSEMBLE_CHUNK = 8


@dataclass
class MashConfig:
    """Hyperparameters of an adaptive masking run.

    tau_low/tau_medium/tau_high: candidate masking ratios.
    eps_low/eps_high: estimation-gap decision thresholds, intensity units.
    iters: final training length N; split_iter: iteration N1 at which the
    shuffled target is built; warmup_iters: length of each warm-up run.
    ensemble_size: number of masked predictions averaged at inference.
    tile_size / flat_threshold: shuffling tile side and flatness threshold.
    sigma_window: trailing iterations averaged into the converged sigma-hat.
    """

    tau_low: float = 0.2
    tau_medium: float = 0.5
    tau_high: float = 0.8
    eps_low: float = 1.5
    eps_high: float = 2.5
    iters: int = 800
    split_iter: int = 400
    warmup_iters: int = 800
    ensemble_size: int = 10
    tile_size: int = 4
    flat_threshold: float = 5.0
    sigma_window: int = 50
    base_lr: float = 1e-4
    floor_lr: float = 1e-6
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if not (0.0 < self.tau_low < self.tau_medium < self.tau_high < 1.0):
            raise ValueError("need 0 < tau_low < tau_medium < tau_high < 1")
        if not (0.0 < self.eps_low < self.eps_high):
            raise ValueError("need 0 < eps_low < eps_high")
        if not (0 < self.split_iter < self.iters):
            raise ValueError("need 0 < split_iter < iters")
        if self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.tile_size < 2:
            raise ValueError("tile_size must be >= 2")
        if self.flat_threshold <= 0:
            raise ValueError("flat_threshold must be > 0")
        if self.sigma_window < 1:
            raise ValueError("sigma_window must be >= 1")

    @classmethod
    def preset(cls, name: str, **overrides) -> "MashConfig":
        """Named presets: ``desk`` (defaults) and ``ci`` (fast, reduced net)."""
        if name == "desk":
            cfg = cls()
        elif name == "ci":
            cfg = cls(
                iters=200,
                split_iter=100,
                warmup_iters=200,
                net=NetConfig(reduced=True),
            )
        else:
            raise ValueError(f"unknown preset {name!r} (expected desk or ci)")
        return replace(cfg, **overrides) if overrides else cfg

    def snapshot(self) -> dict:
        """Flat key/value view for reports and reproduction."""
        out = {}
        for f in fields(self):
            if f.name == "net":
                continue
            out[f.name] = getattr(self, f.name)
        for f in fields(self.net):
            out[f"net.{f.name}"] = getattr(self.net, f.name)
        return out


@dataclass
class GapReport:
    """Decision record of the adaptive masking selection."""

    sigma_low: float
    sigma_high: float
    epsilon: float
    tau_optimal: float
    shuffle_enabled: bool
    seed: int = 0

    def to_text(self) -> str:
        lines = [
            f"sigma_low={self.sigma_low!r}",
            f"sigma_high={self.sigma_high!r}",
            f"epsilon={self.epsilon!r}",
            f"tau_optimal={self.tau_optimal!r}",
            f"shuffle_enabled={'true' if self.shuffle_enabled else 'false'}",
            f"seed={self.seed}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GapReport":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        return cls(
            sigma_low=float(kv["sigma_low"]),
            sigma_high=float(kv["sigma_high"]),
            epsilon=float(kv["epsilon"]),
            tau_optimal=float(kv["tau_optimal"]),
            shuffle_enabled=kv["shuffle_enabled"] == "true",
            seed=int(kv.get("seed", 0)),
        )


def sample_mask(h: int, w: int, c: int, tau: float, rng: np.random.Generator) -> NDArray[np.float32]:
    """Bernoulli blindness mask: 0 (hidden) with probability tau, else 1."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    visible = rng.random((h, w, c), dtype=np.float32) >= tau
    return visible.astype(np.float32)


def estimation_gap(sigma_high: float, sigma_low: float) -> float:
    """Noise-level estimation gap |sigma_high - sigma_low|."""
    if sigma_high < 0 or sigma_low < 0:
        raise ValueError("noise level estimates must be non-negative")
    return abs(sigma_high - sigma_low)


def select_tau(eps: float, cfg: MashConfig) -> tuple[float, bool]:
    """Masking ratio and shuffling flag from the estimation gap.

    tau_low for eps <= eps_low, tau_medium for eps_low < eps <= eps_high,
    tau_high (with shuffling) above.  The eps == eps_high boundary belongs to
    the medium/no-shuffle branch.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps <= cfg.eps_low:
        return cfg.tau_low, False
    if eps <= cfg.eps_high:
        return cfg.tau_medium, False
    return cfg.tau_high, True


def _mask_tensor(shape, tau: float, rng: np.random.Generator, model: DenoiserNet) -> torch.Tensor:
    mask = sample_mask(shape[0], shape[1], shape[2], tau, rng)
    return image_to_tensor(mask, model)


def _step_on_tensors(model, opt, y_t, target_t, mask_t) -> tuple[float, float]:
    """One masked training step; returns (loss, sigma_hat of this step)."""
    model.zero_grad(set_to_none=True)
    out = model(y_t * mask_t)
    loss = masked_loss(out, target_t, 1.0 - mask_t)
    if not torch.isfinite(loss):
        raise DivergenceError(f"training diverged: loss={float(loss)!r}")
    loss.backward()
    with torch.no_grad():
        sigma = torch.sqrt(torch.mean((out.detach() - y_t) ** 2))
    adam_step(model, opt, [p.grad for p in model.parameters()])
    model.zero_grad(set_to_none=True)
    return float(loss.detach()), float(sigma)


def bsd_train_step(
    model: DenoiserNet,
    opt: OptimState,
    y,
    target,
    tau: float,
    rng: np.random.Generator,
) -> float:
    """Sample a fresh mask, apply one blind-spot Adam step, return the loss."""
    y = as_image(y, min_size=8)
    target = as_image(target)
    if y.shape != target.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {target.shape}")
    y_t = image_to_tensor(y, model)
    target_t = image_to_tensor(target, model)
    mask_t = _mask_tensor(y.shape, tau, rng, model)
    loss, _ = _step_on_tensors(model, opt, y_t, target_t, mask_t)
    return loss


@dataclass
class TrainTrace:
    losses: list
    sigmas: list

    def converged_sigma(self, window: int) -> float:
        tail = self.sigmas[-window:]
        return float(np.mean(tail))


def train_run(
    model: DenoiserNet,
    opt: OptimState,
    y,
    target,
    tau: float,
    iters: int,
    mask_rng: np.random.Generator,
) -> TrainTrace:
    """Run ``iters`` blind-spot steps, tracing loss and per-step sigma-hat.

    The sigma-hat trace reuses each step's forward pass (its fresh mask), and
    is always measured against the noisy image ``y`` even when the training
    target is a shuffled variant.
    """
    y = as_image(y, min_size=8)
    target = as_image(target)
    y_t = image_to_tensor(y, model)
    target_t = image_to_tensor(target, model)
    losses, sigmas = [], []
    for _ in range(iters):
        mask_t = _mask_tensor(y.shape, tau, mask_rng, model)
        try:
            loss, sigma = _step_on_tensors(model, opt, y_t, target_t, mask_t)
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} at iteration {len(losses)}") from exc
        losses.append(loss)
        sigmas.append(sigma)
    return TrainTrace(losses=losses, sigmas=sigmas)


def estimate_sigma(
    model: DenoiserNet,
    y,
    tau: float,
    rng: np.random.Generator,
    n_eval: int = 1,
) -> float:
    """Noise-level estimate: RMS residual f(mask*y) - y, averaged over masks."""
    y = as_image(y, min_size=8)
    y_t = image_to_tensor(y, model)
    vals = []
    with torch.no_grad():
        for _ in range(max(1, int(n_eval))):
            mask_t = _mask_tensor(y.shape, tau, rng, model)
            out = model(y_t * mask_t)
            vals.append(float(torch.sqrt(torch.mean((out - y_t) ** 2))))
    return float(np.mean(vals))


def ensemble_predict(
    model: DenoiserNet,
    y,
    tau: float,
    k: int,
    rng: np.random.Generator,
) -> NDArray[np.float32]:
    """Average of ``k`` forward passes under independent masks at ratio tau."""
    if k < 1:
        raise ValueError("ensemble size must be >= 1")
    y = as_image(y, min_size=8)
    y_t = image_to_tensor(y, model)
    total = None
    with torch.no_grad():
        remaining = k
        while remaining > 0:
            batch = min(remaining, ENSEMBLE_CHUNK)
            masks = np.stack(
                [sample_mask(y.shape[0], y.shape[1], y.shape[2], tau, rng) for _ in range(batch)]
            )
            masks_t = (
                torch.from_numpy(np.ascontiguousarray(np.moveaxis(masks, -1, 1)))
                .to(model.config.torch_dtype)
                .contiguous(memory_format=torch.channels_last)
            )
            out = model(y_t * masks_t).sum(dim=0, keepdim=True)
            total = out if total is None else total + out
            remaining -= batch
    return tensor_to_image(total / k)
