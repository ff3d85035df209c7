"""Local pixel shuffling: flatness detection plus within-tile permutation.

The image is partitioned into non-overlapping ``s x s`` tiles anchored at
(0, 0); remainder tiles at the right/bottom edges keep their smaller size.
A tile is flat when the per-channel population standard deviation of a
pseudo-clean reference image, averaged over channels, falls below a
threshold.  Shuffling permutes whole pixels (all channels move together)
inside flat tiles only, which destroys local noise correlation while leaving
the underlying flat signal untouched.
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from mash.image_io import as_image


@dataclass
class FlatnessMap:
    """Per-pixel flatness decision derived from a pseudo-clean image."""

    sigma_map: NDArray[np.float32]  # (H, W) tile-local std, broadcast per tile
    c_mask: NDArray[np.uint8]  # (H, W), 1 = flat
    tile_size: int
    threshold: float

    @property
    def flat_fraction(self) -> float:
        return float(self.c_mask.mean())


@dataclass
class ShuffledImage:
    """Shuffling result plus the per-tile permutations for test replay."""

    image: NDArray[np.float32]
    permutation_log: dict  # (tile_row, tile_col) -> flat index permutation


def _tile_slices(h: int, w: int, s: int):
    for ti, r0 in enumerate(range(0, h, s)):
        for tj, c0 in enumerate(range(0, w, s)):
            yield (ti, tj), slice(r0, min(r0 + s, h)), slice(c0, min(c0 + s, w))


def flatness_map(pseudo_clean, tile_size: int, threshold: float) -> FlatnessMap:
    """Tile-local standard deviation map and its thresholded flat mask."""
    img = as_image(pseudo_clean).astype(np.float64)
    h, w, _ = img.shape
    s = int(tile_size)
    if s < 2:
        raise ValueError("tile_size must be >= 2")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if s > h and s > w:
        raise ValueError(f"tile_size {s} larger than both image dimensions {h}x{w}")
    sigma_map = np.empty((h, w), dtype=np.float32)
    for _, rows, cols in _tile_slices(h, w, s):
        tile = img[rows, cols, :]
        # population std per channel, then averaged across channels
        sigma = tile.std(axis=(0, 1)).mean()
        sigma_map[rows, cols] = sigma
    c_mask = (sigma_map < threshold).astype(np.uint8)
    return FlatnessMap(sigma_map=sigma_map, c_mask=c_mask, tile_size=s, threshold=float(threshold))


def local_shuffle(y, fmap: FlatnessMap, rng: np.random.Generator) -> ShuffledImage:
    """Permute pixels uniformly at random inside each flat tile.

    Pixels move as whole C-channel vectors; non-flat tiles are copied
    verbatim.  Tiles are visited in row-major order, so the output is
    deterministic for a given (input, flatness map, seed).
    """
    img = as_image(y)
    h, w, _ = img.shape
    if fmap.c_mask.shape != (h, w):
        raise ValueError(f"flatness map shape {fmap.c_mask.shape} does not match image {h}x{w}")
    out = img.copy()
    log = {}
    s = fmap.tile_size
    for key, rows, cols in _tile_slices(h, w, s):
        if not fmap.c_mask[rows.start, cols.start]:
            continue
        tile = img[rows, cols, :]
        npix = tile.shape[0] * tile.shape[1]
        perm = rng.permutation(npix)
        flat = tile.reshape(npix, -1)
        out[rows, cols, :] = flat[perm].reshape(tile.shape)
        log[key] = perm
    return ShuffledImage(image=out, permutation_log=log)
