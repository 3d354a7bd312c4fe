"""Image quality and rate metrics on [0, 1]-ranged RGB arrays."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionError, InputError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_SSIM_MIN_SIDE = WINDOW_SIZE * 2 ** (len(MS_SSIM_WEIGHTS) - 1)


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1.0, jointly over all channels; ``inf`` when identical."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    half = len(win) // 2
    out = correlate1d(img, win, axis=-2, mode="constant")
    out = correlate1d(out, win, axis=-1, mode="constant")
    return out[..., half:-half, half:-half]


def _ssim_terms(a, b, win):
    c1 = K1**2
    c2 = K2**2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a**2
    var_b = _filter_valid(b * b, win) - mu_b**2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    axes = (-2, -1)
    return (lum * cs).mean(axis=axes), cs.mean(axis=axes)


def _downsample(x):
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    x = x[..., : 2 * h, : 2 * w]
    return x.reshape(x.shape[:-2] + (h, 2, w, 2)).mean(axis=(-3, -1))


def ms_ssim(a, b) -> float:
    """Five-scale MS-SSIM averaged over channels (and images in a batch).

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, data range 1,
    2x2 mean-pool between scales. Negative contrast terms are clamped to 0
    before exponentiation.
    """
    a, b = _pair(a, b)
    if a.ndim < 2:
        raise DimensionError("ms_ssim needs at least 2-D inputs")
    if min(a.shape[-2:]) < MS_SSIM_MIN_SIDE:
        raise InputError(f"ms_ssim needs H and W >= {MS_SSIM_MIN_SIDE}, got {a.shape[-2]}x{a.shape[-1]}")
    win = gaussian_window()
    weights = np.asarray(MS_SSIM_WEIGHTS)
    levels = len(weights)
    value = 1.0
    for level in range(levels):
        ssim, cs = _ssim_terms(a, b, win)
        if level < levels - 1:
            value = value * np.maximum(cs, 0.0) ** weights[level]
            a, b = _downsample(a), _downsample(b)
        else:
            value = value * np.maximum(ssim, 0.0) ** weights[level]
    return float(np.mean(value))


def bpp(total_bits: float, h: int, w: int) -> float:
    """Bits per pixel of the original (unpadded) image."""
    if h <= 0 or w <= 0:
        raise InputError(f"image dimensions must be positive, got {h}x{w}")
    return float(total_bits) / (h * w)
