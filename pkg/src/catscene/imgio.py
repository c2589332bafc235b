"""Small raster IO helpers: 8-bit RGB PNG load/save and resizing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_png(array: np.ndarray, path: str | Path) -> None:
    """Save an (H, W, 3) uint8 array as a lossless RGB PNG."""
    if array.dtype != np.uint8 or array.ndim != 3 or array.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 array, got {array.shape} {array.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode="RGB").save(path)


def load_png(path: str | Path) -> np.ndarray:
    """Load an RGB PNG as an (H, W, 3) uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def resize_rgb(array: np.ndarray, size: int) -> np.ndarray:
    """Resize an (H, W, 3) uint8 image to (size, size, 3) with bilinear filtering."""
    if array.shape[0] == size and array.shape[1] == size:
        return array
    im = Image.fromarray(array, mode="RGB").resize((size, size), Image.BILINEAR)
    return np.asarray(im)


def to_model_input(array: np.ndarray, size: int) -> np.ndarray:
    """Resize and convert to a (3, size, size) float32 array scaled to [0, 1]."""
    resized = resize_rgb(array, size)
    return np.transpose(resized, (2, 0, 1)).astype(np.float32) / 255.0
