"""The convolutional denoiser, its optimizer and checkpoint format.

A compact U-Net style encoder-decoder (Noise2Noise family): ``depth`` pooling
stages with 3x3 "same" convolutions and leaky rectifiers, nearest-neighbor
upsampling with skip concatenation on the way back, then a 64/32-wide head and
a final linear projection to the input channel count.  The default
configuration has ~1.07 M parameters for 3 channels; ``reduced`` selects a
small CI-scale variant (width 16, depth 3).

Images enter and leave in the [0, 255] domain; the module divides by 255 at
the input and multiplies back at the output so initialization scales stay
sane.  This wrapper is invisible to callers.

Training state is explicit: :class:`OptimState` holds the Adam moments and
the cosine learning-rate schedule, and :func:`adam_step` applies one update.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from numpy.typing import NDArray
from torch import nn

from mash.errors import DivergenceError, ImageFormatError
from mash.image_io import as_image

CHECKPOINT_MAGIC = b"MSHW"

REDUCED_BASE_WIDTH = 16
REDUCED_DEPTH = 3
HEAD_WIDTHS = (64, 32)
LAST_STAGE_WIDTH = 64


@dataclass
class NetConfig:
    """Architecture hyperparameters.

    ``reduced=True`` overrides ``base_width``/``depth`` with the CI-scale
    values (16, 3).  Input height and width must be divisible by
    ``2**depth``.
    """

    in_channels: int = 3
    base_width: int = 48
    depth: int = 5
    leaky_slope: float = 0.1
    reduced: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.reduced:
            self.base_width = REDUCED_BASE_WIDTH
            self.depth = REDUCED_DEPTH
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 or 3")
        if self.base_width < 1 or self.depth < 1:
            raise ValueError("base_width and depth must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    @property
    def spatial_multiple(self) -> int:
        return 2**self.depth


class DenoiserNet(nn.Module):
    """Encoder-decoder denoiser; construction order defines parameter order."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        c, w, depth = config.in_channels, config.base_width, config.depth
        d = 2 * w
        conv = lambda ci, co: nn.Conv2d(ci, co, 3, padding=1)

        self.enc_first = conv(c, w)
        self.enc_convs = nn.ModuleList([conv(w, w) for _ in range(depth)])
        dec_a, dec_b = [], []
        for j in range(depth):
            if j == 0:
                ci, co = 2 * w, d  # bottleneck + deepest skip
            elif j < depth - 1:
                ci, co = d + w, d
            else:
                ci, co = d + w, LAST_STAGE_WIDTH  # full-resolution stage
            dec_a.append(conv(ci, co))
            dec_b.append(conv(co, co))
        self.dec_a = nn.ModuleList(dec_a)
        self.dec_b = nn.ModuleList(dec_b)
        self.head_a = conv(LAST_STAGE_WIDTH, HEAD_WIDTHS[0])
        self.head_b = conv(HEAD_WIDTHS[0], HEAD_WIDTHS[1])
        self.proj = conv(HEAD_WIDTHS[1], c)
        self.to(config.torch_dtype)
        self.to(memory_format=torch.channels_last)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        mult = cfg.spatial_multiple
        if x.shape[-2] % mult or x.shape[-1] % mult:
            raise ValueError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by 2^depth = {mult}"
            )
        slope = cfg.leaky_slope
        a = x / 255.0
        skips = []
        a = F.leaky_relu(self.enc_first(a), slope)
        for i, enc in enumerate(self.enc_convs):
            a = F.leaky_relu(enc(a), slope)
            skips.append(a)
            a = F.max_pool2d(a, 2)
        for j, (ca, cb) in enumerate(zip(self.dec_a, self.dec_b)):
            a = F.interpolate(a, scale_factor=2.0, mode="nearest")
            a = torch.cat([a, skips[len(skips) - 1 - j]], dim=1)
            a = F.leaky_relu(ca(a), slope)
            a = F.leaky_relu(cb(a), slope)
        a = F.leaky_relu(self.head_a(a), slope)
        a = F.leaky_relu(self.head_b(a), slope)
        return self.proj(a) * 255.0


def init_model(config: NetConfig, rng: np.random.Generator) -> DenoiserNet:
    """Build a DenoiserNet with Kaiming-style initialization from ``rng``.

    Kernel entries are N(0, 2 / (fan_in * (1 + leaky_slope^2))); biases zero.
    Draws happen in topology order, so a seed fixes the parameters bitwise.
    """
    model = DenoiserNet(config)
    gain = 2.0 / (1.0 + config.leaky_slope**2)
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.Conv2d):
                fan_in = mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
                std = math.sqrt(gain / fan_in)
                sample = rng.normal(0.0, std, size=tuple(mod.weight.shape))
                mod.weight.copy_(torch.from_numpy(sample).to(mod.weight.dtype))
                mod.bias.zero_()
    return model


def count_parameters(model: DenoiserNet) -> int:
    return sum(p.numel() for p in model.parameters())


def image_to_tensor(img: NDArray, model: DenoiserNet) -> torch.Tensor:
    """(H, W, C) array -> (1, C, H, W) tensor in the model dtype/layout."""
    arr = np.ascontiguousarray(np.moveaxis(np.asarray(img), -1, 0))[None]
    t = torch.from_numpy(arr).to(model.config.torch_dtype)
    return t.contiguous(memory_format=torch.channels_last)


def tensor_to_image(t: torch.Tensor) -> NDArray[np.float32]:
    """(1, C, H, W) tensor -> (H, W, C) float32 array."""
    return np.moveaxis(t.detach().squeeze(0).to(torch.float32).numpy(), 0, -1).copy()


def forward(model: DenoiserNet, img) -> NDArray[np.float32]:
    """Run the network on an (H, W, C) image, returning the same shape."""
    img = as_image(img, min_size=8)
    with torch.no_grad():
        out = model(image_to_tensor(img, model))
    return tensor_to_image(out)


def masked_loss(out: torch.Tensor, target: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """Weighted squared error averaged over all H*W*C elements."""
    return (weight * (out - target) ** 2).sum() / out.numel()


def loss_and_grads(model: DenoiserNet, input_img, target_img, weight):
    """Loss and exact parameter gradients for one (input, target, weight) triple.

    The loss is sum(weight * (f(input) - target)^2) / (H*W*C); gradients come
    from reverse-mode differentiation through the full network.
    """
    inp = image_to_tensor(as_image(input_img, min_size=8), model)
    tgt = image_to_tensor(as_image(target_img), model)
    wgt = image_to_tensor(as_image(weight), model)
    if inp.shape != tgt.shape or inp.shape != wgt.shape:
        raise ValueError("input, target and weight must share one shape")
    model.zero_grad(set_to_none=True)
    loss = masked_loss(model(inp), tgt, wgt)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite loss {float(loss)!r}")
    loss.backward()
    grads = [
        (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for p in model.parameters()
    ]
    model.zero_grad(set_to_none=True)
    return float(loss), grads


def cosine_lr(step: int, total_steps: int, base_lr: float, floor_lr: float) -> float:
    """Cosine interpolation from ``base_lr`` (step 0) to ``floor_lr`` (step N)."""
    t = min(max(step, 0), total_steps)
    w = 0.5 * (1.0 + math.cos(math.pi * t / total_steps))
    return base_lr * w + floor_lr * (1.0 - w)


@dataclass
class OptimState:
    """Adam accumulators plus the cosine learning-rate schedule."""

    base_lr: float
    total_steps: int
    floor_lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model: DenoiserNet, base_lr: float, total_steps: int,
                  floor_lr: float = 1e-6) -> "OptimState":
        state = cls(base_lr=base_lr, total_steps=total_steps, floor_lr=floor_lr)
        state.m = [torch.zeros_like(p) for p in model.parameters()]
        state.v = [torch.zeros_like(p) for p in model.parameters()]
        return state

    @property
    def lr(self) -> float:
        return cosine_lr(self.step, self.total_steps, self.base_lr, self.floor_lr)


def adam_step(model: DenoiserNet, opt: OptimState, grads) -> None:
    """One Adam update with bias correction at the scheduled learning rate."""
    lr = opt.lr
    t = opt.step + 1
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    with torch.no_grad():
        for p, g, m, v in zip(model.parameters(), grads, opt.m, opt.v):
            if not torch.isfinite(g).all():
                raise DivergenceError("non-finite gradient")
            m.mul_(opt.beta1).add_(g, alpha=1.0 - opt.beta1)
            v.mul_(opt.beta2).addcmul_(g, g, value=1.0 - opt.beta2)
            denom = (v / bc2).sqrt_().add_(opt.eps_adam)
            p.addcdiv_(m, denom, value=-lr / bc1)
    opt.step += 1


def save_checkpoint(model: DenoiserNet, path) -> None:
    """Write magic, config block and parameter tensors in topology order."""
    cfg = model.config
    dtype_code = 1 if cfg.dtype == "float64" else 0
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIfBB",
                cfg.in_channels,
                cfg.base_width,
                cfg.depth,
                cfg.leaky_slope,
                1 if cfg.reduced else 0,
                dtype_code,
            )
        )
        kind = "<f8" if dtype_code else "<f4"
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.detach().cpu().numpy(), dtype=kind).tobytes())


def load_checkpoint(path) -> DenoiserNet:
    """Rebuild a model from a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ImageFormatError(f"bad checkpoint magic in {path}")
    in_channels, base_width, depth, slope, reduced, dtype_code = struct.unpack(
        "<IIIfBB", blob[4 : 4 + 18]
    )
    cfg = NetConfig(
        in_channels=in_channels,
        base_width=base_width,
        depth=depth,
        leaky_slope=slope,
        reduced=bool(reduced),
        dtype="float64" if dtype_code else "float32",
    )
    model = DenoiserNet(cfg)
    kind = "<f8" if dtype_code else "<f4"
    itemsize = 8 if dtype_code else 4
    offset = 4 + 18
    with torch.no_grad():
        for p in model.parameters():
            nbytes = p.numel() * itemsize
            chunk = blob[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise ImageFormatError(f"truncated checkpoint {path}")
            arr = np.frombuffer(chunk, dtype=kind).reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(arr.copy()))
            offset += nbytes
    if offset != len(blob):
        raise ImageFormatError(f"trailing bytes in checkpoint {path}")
    return model
