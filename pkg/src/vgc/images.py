"""8-bit RGB image I/O (PNG and PPM only) and pixel-domain conversion."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import UnsupportedFormatError

_FORMATS = {".png": "PNG", ".ppm": "PPM"}


def _check_suffix(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix not in _FORMATS:
        raise UnsupportedFormatError(
            f"unsupported image format {suffix!r}; use .png or .ppm"
        )
    return _FORMATS[suffix]


def load_image(path) -> np.ndarray:
    """Read an image file as an (H, W, 3) uint8 array."""
    fmt = _check_suffix(path)
    with Image.open(path) as im:
        if im.format not in ("PNG", "PPM"):
            raise UnsupportedFormatError(
                f"file {path} is {im.format}, expected {fmt}"
            )
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, img: np.ndarray):
    """Write an (H, W, 3) uint8 array to a PNG or PPM file."""
    _check_suffix(path)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    Image.fromarray(img, mode="RGB").save(path)


def to_unit(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 (H, W, 3) -> (3, H, W) float in [-1, 1]."""
    return (img.astype(dtype) / 127.5 - 1.0).transpose(2, 0, 1)


def from_unit(x: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [-1, 1] -> uint8 (H, W, 3)."""
    arr = np.clip(np.rint((np.asarray(x, np.float64) + 1.0) * 127.5), 0, 255)
    return arr.astype(np.uint8).transpose(1, 2, 0)
