"""8-bit PNG/PPM reading and writing; arrays are (3, H, W) float32 in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

SUPPORTED_SUFFIXES = {".png": "PNG", ".ppm": "PPM"}


def _format_for(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise InputError(
            f"{path}: unsupported image format {suffix or '(none)'}; convert to PNG or PPM first "
            f"(for example `convert in{suffix} out.png`)"
        )
    return SUPPORTED_SUFFIXES[suffix]


def read_image(path) -> np.ndarray:
    _format_for(path)
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: cannot read image ({exc})") from None
    return np.ascontiguousarray(rgb.transpose(2, 0, 1) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) floats -> (H, W, 3) uint8 with rounding."""
    img = np.asarray(img)
    if img.ndim == 4:
        img = img[0]
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_image(path, img: np.ndarray):
    fmt = _format_for(path)
    Image.fromarray(to_uint8(img), "RGB").save(path, format=fmt)


def list_images(directory) -> list:
    """Sorted PNG/PPM files in ``directory`` (non-recursive)."""
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in SUPPORTED_SUFFIXES)
