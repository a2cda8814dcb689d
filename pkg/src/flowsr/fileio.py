"""Flat binary image format (.f32img) and 16-bit PNG export.

The .f32img layout is: 8-byte magic ``F32IMG\\0\\0``, uint32 little-endian
height, uint32 little-endian width, then height*width IEEE-754 little-endian
float32 values in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

F32IMG_MAGIC = b"F32IMG\x00\x00"

__all__ = ["read_f32img", "write_f32img", "write_png16", "F32IMG_MAGIC"]


class ImageFormatError(ValueError):
    """Raised when an image file does not match the expected layout."""


def write_f32img(path: str | Path, image: np.ndarray) -> None:
    """Write a 2-D float array to ``path`` in .f32img format."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(F32IMG_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_f32img(path: str | Path) -> np.ndarray:
    """Read a .f32img file into a float32 array of shape (height, width)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != F32IMG_MAGIC:
            raise ImageFormatError(f"{path}: bad magic {magic!r}")
        header = f.read(8)
        if len(header) != 8:
            raise ImageFormatError(f"{path}: truncated header")
        h, w = struct.unpack("<II", header)
        data = f.read(4 * h * w)
        if len(data) != 4 * h * w:
            raise ImageFormatError(f"{path}: expected {4 * h * w} data bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(h, w).astype(np.float32)


def write_png16(path: str | Path, image: np.ndarray) -> None:
    """Export an image as 16-bit grayscale PNG with a JSON sidecar.

    Intensities are mapped linearly from [min, max] to [0, 65535]; the affine
    mapping is recorded in ``<path>.json`` so values remain recoverable.
    """
    from PIL import Image

    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    quantized = np.clip((img - lo) * scale, 0.0, 65535.0).astype(np.uint16)
    Image.fromarray(quantized).save(path)
    sidecar = {"min": lo, "max": hi, "scale": scale}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))
