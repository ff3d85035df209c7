"""PSNR and SSIM quality metrics on the [0, 255] intensity domain."""

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import correlate

from mash.image_io import as_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB over the flattened arrays.

    Returns ``inf`` when the images are identical.
    """
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> NDArray[np.float64]:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Computed per channel on the window-valid interior and averaged; constants
    C1 = (0.01 * peak)^2 and C2 = (0.03 * peak)^2, population covariances.
    """
    a = as_image(a).astype(np.float64)
    b = as_image(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    h, w, nchan = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")

    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    pad = SSIM_WINDOW // 2

    def _filter(x):
        return correlate(x, win, mode="constant")[pad:-pad, pad:-pad]

    vals = []
    for ch in range(nchan):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _filter(x)
        mu_y = _filter(y)
        var_x = _filter(x * x) - mu_x * mu_x
        var_y = _filter(y * y) - mu_y * mu_y
        cov = _filter(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
