"""Image representation, file I/O and resizing.

Images are ``float32`` numpy arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and intensities in the ``[0, 255]`` domain.  Noisy images are kept
unclamped internally; clamping happens only on 8-bit PNG export.  The native
raw format (``.mshf``) stores exact 32-bit floats so that quantitative
pipelines are free of quantization noise.
"""

import struct
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from PIL import Image as PILImage, UnidentifiedImageError

from mash.errors import ImageFormatError

RAWF32_MAGIC = b"MSHF"


def as_image(data, min_size: int = 1) -> NDArray[np.float32]:
    """Coerce ``data`` to a float32 ``(H, W, C)`` image array and validate it.

    Accepts ``(H, W)`` grayscale or ``(H, W, C)`` arrays with ``C`` in
    ``{1, 3}``.  ``min_size`` raises the minimum height/width requirement
    (network inputs need at least 8 pixels per side).
    """
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D image array, got ndim={arr.ndim}")
    h, w, c = arr.shape
    if c not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {c}")
    if h < min_size or w < min_size:
        raise ValueError(f"image {h}x{w} smaller than minimum size {min_size}")
    if h == 0 or w == 0:
        raise ValueError("zero-sized image")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def load_image(path) -> NDArray[np.float32]:
    """Load an 8-bit PNG or raw-float (``MSHF``) file as a float32 image.

    8-bit intensities map integrally (0 -> 0.0, 255 -> 255.0); raw floats are
    returned exactly as stored.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == RAWF32_MAGIC:
        return _read_rawf32(path)
    return _read_png(path)


def save_image(img, path, format: str = "auto") -> None:
    """Write an image as 8-bit PNG (``png8``) or raw float32 (``rawf32``).

    ``png8`` clamps to [0, 255] and rounds half away from zero; ``rawf32``
    preserves the exact float32 values (load(save(x)) is bit-identical).
    ``auto`` picks the format from the file suffix.
    """
    img = as_image(img)
    path = Path(path)
    if format == "auto":
        format = "png8" if path.suffix.lower() == ".png" else "rawf32"
    if format == "png8":
        _write_png(img, path)
    elif format == "rawf32":
        _write_rawf32(img, path)
    else:
        raise ValueError(f"unknown format {format!r} (expected png8 or rawf32)")


def downscale(img, factor: int) -> NDArray[np.float32]:
    """Box-filter downscale by an integer factor (dimensions must divide)."""
    img = as_image(img)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image {h}x{w} not divisible by factor {factor}")
    if factor == 1:
        return img.copy()
    blocks = img.reshape(h // factor, factor, w // factor, factor, c)
    return blocks.mean(axis=(1, 3), dtype=np.float64).astype(np.float32)


def _read_png(path: Path) -> NDArray[np.float32]:
    try:
        with PILImage.open(path) as pil:
            pil.load()
            if pil.mode not in ("L", "RGB"):
                if pil.mode in ("P", "RGBA", "LA", "I", "1"):
                    pil = pil.convert("RGB" if pil.mode in ("P", "RGBA") else "L")
                else:
                    raise ImageFormatError(f"unsupported PNG mode {pil.mode!r}")
            arr = np.asarray(pil, dtype=np.float32)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"not a PNG or MSHF file: {path}") from exc
    except OSError as exc:
        raise ImageFormatError(f"corrupt image file: {path}") from exc
    if arr.size == 0:
        raise ImageFormatError(f"zero-sized image: {path}")
    return as_image(arr)


def _write_png(img: NDArray[np.float32], path: Path) -> None:
    # round half away from zero; values are non-negative after the clamp
    quant = np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)
    if quant.shape[2] == 1:
        pil = PILImage.fromarray(quant[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(quant, mode="RGB")
    pil.save(path, format="PNG")


def _read_rawf32(path: Path) -> NDArray[np.float32]:
    blob = path.read_bytes()
    if len(blob) < 16:
        raise ImageFormatError(f"truncated MSHF header: {path}")
    magic, h, w, c = struct.unpack("<4sIII", blob[:16])
    if magic != RAWF32_MAGIC:
        raise ImageFormatError(f"bad MSHF magic in {path}")
    if c not in (1, 3) or h == 0 or w == 0:
        raise ImageFormatError(f"invalid MSHF dimensions {h}x{w}x{c} in {path}")
    expected = 16 + h * w * c * 4
    if len(blob) != expected:
        raise ImageFormatError(
            f"corrupt MSHF payload in {path}: expected {expected} bytes, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return data.reshape(h, w, c).astype(np.float32, copy=True)


def _write_rawf32(img: NDArray[np.float32], path: Path) -> None:
    h, w, c = img.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", RAWF32_MAGIC, h, w, c))
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())
