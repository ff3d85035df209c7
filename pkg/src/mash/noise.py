"""Synthesis of spatially correlated Gaussian noise and empirical checks.

The covariance between two pixels i and j is

    sigma^2                          if i == j
    beta * (k - d)/k * sigma^2       if 0 < d <= k,  d = ||i - j||
    0                                otherwise

with independent fields per color channel.  The triangular kernel is not
guaranteed positive semidefinite on a 2-D grid, so both samplers clip the
negative part of its spectrum and rescale so the per-pixel variance is
exactly sigma^2.

Two samplers are provided: an exact dense-factor path for oracle-scale grids
(h*w <= 4096) and an FFT circulant-embedding path for arbitrary sizes.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from mash.image_io import as_image

EXACT_GRID_LIMIT = 4096


@dataclass(frozen=True)
class NoiseModel:
    """Parameters of the correlated-noise covariance.

    sigma: noise standard deviation in [0, 255] intensity units.
    beta: correlation magnitude (0 = iid, 1 = heavily correlated).
    kernel_width: correlation radius k in pixels.
    metric: pixel distance, "euclidean" (default) or "chebyshev".
    """

    sigma: float = 25.0
    beta: float = 0.0
    kernel_width: int = 3
    metric: str = "euclidean"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.kernel_width < 1:
            raise ValueError("kernel_width must be >= 1")
        if self.metric not in ("euclidean", "chebyshev"):
            raise ValueError(f"unknown metric {self.metric!r}")


def _distance(model: NoiseModel, dr: int, dc: int) -> float:
    if model.metric == "chebyshev":
        return float(max(abs(dr), abs(dc)))
    return math.sqrt(dr * dr + dc * dc)


def covariance_entry(model: NoiseModel, i, j) -> float:
    """Covariance between pixel coordinates ``i = (row, col)`` and ``j``."""
    dr, dc = int(i[0]) - int(j[0]), int(i[1]) - int(j[1])
    if dr == 0 and dc == 0:
        return model.sigma**2
    d = _distance(model, dr, dc)
    if d <= model.kernel_width:
        return model.beta * (model.kernel_width - d) / model.kernel_width * model.sigma**2
    return 0.0


def _raw_covariance(model: NoiseModel, h: int, w: int) -> NDArray[np.float64]:
    rows, cols = np.divmod(np.arange(h * w), w)
    dr = rows[:, None] - rows[None, :]
    dc = cols[:, None] - cols[None, :]
    if model.metric == "chebyshev":
        d = np.maximum(np.abs(dr), np.abs(dc)).astype(np.float64)
    else:
        d = np.sqrt((dr * dr + dc * dc).astype(np.float64))
    k = float(model.kernel_width)
    cov = np.where(d <= k, model.beta * (k - d) / k * model.sigma**2, 0.0)
    np.fill_diagonal(cov, model.sigma**2)
    return cov


def _repaired_factor(model: NoiseModel, h: int, w: int):
    """Eigen square-root factor L of the PSD-repaired covariance (Sigma = L L^T)."""
    cov = _raw_covariance(model, h, w)
    eigval, eigvec = np.linalg.eigh(cov)
    eigval = np.clip(eigval, 0.0, None)
    repaired = (eigvec * eigval) @ eigvec.T
    diag = np.diag(repaired).copy()
    if np.any(diag <= 0):
        raise FloatingPointError("covariance repair produced a non-positive diagonal")
    scale = model.sigma / np.sqrt(diag)
    repaired = repaired * scale[:, None] * scale[None, :]
    factor = scale[:, None] * (eigvec * np.sqrt(eigval))
    return repaired, factor


def build_covariance(model: NoiseModel, h: int, w: int) -> NDArray[np.float64]:
    """Exact (h*w x h*w) covariance matrix after PSD repair.

    Eigenvalues are clipped at zero and the diagonal is rescaled back to
    sigma^2 exactly.  Restricted to oracle-scale grids (h*w <= 4096).
    """
    if h * w > EXACT_GRID_LIMIT:
        raise ValueError(f"grid {h}x{w} too large for the exact path (limit {EXACT_GRID_LIMIT})")
    repaired, _ = _repaired_factor(model, h, w)
    return repaired


def sample_noise_exact_batch(
    model: NoiseModel, h: int, w: int, n: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Draw ``n`` independent (h, w) fields through the dense factor."""
    if h * w > EXACT_GRID_LIMIT:
        raise ValueError(f"grid {h}x{w} too large for the exact path (limit {EXACT_GRID_LIMIT})")
    _, factor = _repaired_factor(model, h, w)
    z = rng.standard_normal((h * w, n))
    return (factor @ z).T.reshape(n, h, w)


def sample_noise_exact(
    model: NoiseModel, h: int, w: int, c: int, rng: np.random.Generator
) -> NDArray[np.float32]:
    """Zero-mean correlated noise image via the exact dense factor."""
    fields = sample_noise_exact_batch(model, h, w, c, rng)
    return np.moveaxis(fields, 0, -1).astype(np.float32)


def _embedding_spectrum(model: NoiseModel, h: int, w: int):
    """Clipped spectral square root of the kernel embedded on a torus.

    The torus is 2h x 2w (enlarged when the kernel radius would alias) and
    the field is rescaled so the per-pixel variance equals sigma^2 after the
    spectral clipping.
    """
    k = model.kernel_width
    m = max(2 * h, h + k + 1)
    n = max(2 * w, w + k + 1)
    dr = np.minimum(np.arange(m), m - np.arange(m))
    dc = np.minimum(np.arange(n), n - np.arange(n))
    if model.metric == "chebyshev":
        d = np.maximum(dr[:, None], dc[None, :]).astype(np.float64)
    else:
        d = np.sqrt(dr[:, None] ** 2 + dc[None, :] ** 2)
    kernel = np.where(d <= k, model.beta * (k - d) / k * model.sigma**2, 0.0)
    kernel[0, 0] = model.sigma**2
    spectrum = np.fft.fft2(kernel).real
    spectrum = np.clip(spectrum, 0.0, None)
    variance = spectrum.mean()  # lag-0 value of the clipped kernel
    scale = model.sigma / math.sqrt(variance)
    return np.sqrt(spectrum), scale, m, n


def sample_noise_fast_batch(
    model: NoiseModel, h: int, w: int, n_fields: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Draw ``n_fields`` independent (h, w) fields via circulant embedding."""
    sqrt_spec, scale, m, n = _embedding_spectrum(model, h, w)
    white = rng.standard_normal((n_fields, m, n))
    field = np.fft.ifft2(sqrt_spec[None] * np.fft.fft2(white)).real
    return scale * field[:, :h, :w]


def sample_noise_fast(
    model: NoiseModel, h: int, w: int, c: int, rng: np.random.Generator
) -> NDArray[np.float32]:
    """Zero-mean correlated noise image via circulant embedding (any size)."""
    fields = sample_noise_fast_batch(model, h, w, c, rng)
    return np.moveaxis(fields, 0, -1).astype(np.float32)


def add_noise(clean, model: NoiseModel, rng: np.random.Generator) -> NDArray[np.float32]:
    """Add a fresh correlated noise sample to a clean image (unclamped)."""
    clean = as_image(clean)
    h, w, c = clean.shape
    return clean + sample_noise_fast(model, h, w, c, rng)


def empirical_autocovariance(noise_samples, max_lag: int) -> dict:
    """Average of noise[i] * noise[j] grouped by integer lag vector.

    Returns ``{(lag_row, lag_col): covariance}`` for the non-redundant lags
    ``(0, 0..max_lag)`` and ``(1..max_lag, -max_lag..max_lag)``, pooled over
    samples, positions and channels.
    """
    if len(noise_samples) == 0:
        raise ValueError("empty sample list")
    if len(noise_samples) < 2:
        raise ValueError("need at least 2 samples")
    arrs = [as_image(s).astype(np.float64) for s in noise_samples]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("samples must share one shape")
    stack = np.stack(arrs)  # (n, h, w, c)

    out = {}
    for dr in range(0, max_lag + 1):
        dcs = range(0, max_lag + 1) if dr == 0 else range(-max_lag, max_lag + 1)
        for dc in dcs:
            a = stack[:, : shape[0] - dr, :, :]
            b = stack[:, dr:, :, :]
            if dc >= 0:
                prod = a[:, :, : shape[1] - dc, :] * b[:, :, dc:, :]
            else:
                prod = a[:, :, -dc:, :] * b[:, :, : shape[1] + dc, :]
            out[(dr, dc)] = float(prod.mean())
    return out
