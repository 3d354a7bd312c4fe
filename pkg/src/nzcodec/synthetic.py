"""Seeded synthetic photographs for desk-scale training and tests.

Images combine smooth multi-scale colour fields, flat-shaded shapes with
sharp edges and fine grain, then quantize to 8 bits like real captures.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter


def synthetic_image(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((3, h, w))
    for sigma, amp in ((max(h, w) / 4, 0.35), (max(h, w) / 16, 0.15), (2.0, 0.04)):
        field = gaussian_filter(rng.standard_normal((3, h, w)), sigma=(0, sigma, sigma))
        field /= field.std() + 1e-12
        img += amp * field
    img += rng.uniform(0.3, 0.7, size=(3, 1, 1))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(3, 9)):
        colour = rng.uniform(0.0, 1.0, size=(3, 1))
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(h / 16, h / 3), rng.uniform(w / 16, w / 3)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        alpha = rng.uniform(0.5, 1.0)
        img[:, mask] = (1 - alpha) * img[:, mask] + alpha * colour
    img += 0.01 * rng.standard_normal(img.shape)
    return (np.clip(np.rint(np.clip(img, 0, 1) * 255), 0, 255) / 255.0).astype(np.float32)


def synthetic_images(n: int, h: int, w: int, seed: int = 0) -> np.ndarray:
    """``n`` images stacked as (n, 3, h, w) float32."""
    rng = np.random.default_rng(seed)
    return np.stack([synthetic_image(h, w, rng) for _ in range(n)])
