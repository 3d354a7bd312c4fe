"""Differentiable distortion terms and the rate-distortion Lagrangian."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, InputError
from .metrics import K1, K2, MS_SSIM_MIN_SIDE, MS_SSIM_WEIGHTS, gaussian_window
from .ndtensor import Tensor
from .ndtensor import functional as F

LAMBDAS = {
    "mse": (0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483, 0.0932, 0.1800),
    "ms-ssim": (2.40, 4.58, 8.73, 16.64, 31.73, 60.50, 115.37, 220.00),
}


def lambda_for_quality(metric: str, quality: int) -> float:
    """Lagrange multiplier used to train quality preset ``quality`` (1..8)."""
    if metric not in LAMBDAS:
        raise InputError(f"unknown metric {metric!r}; choose mse or ms-ssim")
    if not isinstance(quality, (int, np.integer)) or not 1 <= quality <= 8:
        raise InputError(f"quality must be an integer in 1..8, got {quality!r}")
    return LAMBDAS[metric][quality - 1]


def _blur_valid(x: Tensor, kernel: Tensor) -> Tensor:
    n, c, h, w = x.shape
    flat = x.reshape(n * c, 1, h, w)
    out = F.conv2d(flat, kernel, None, stride=1, pad=0)
    return out.reshape(n, c, out.shape[2], out.shape[3])


def ms_ssim_tensor(a: Tensor, b: Tensor) -> Tensor:
    """Graph-recording MS-SSIM; same definition as :func:`nzcodec.metrics.ms_ssim`.

    Returns the per-image value averaged over the batch.
    """
    if a.shape != b.shape:
        raise DimensionError(f"ms_ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < MS_SSIM_MIN_SIDE:
        raise InputError(f"ms_ssim needs H and W >= {MS_SSIM_MIN_SIDE}, got {a.shape[-2]}x{a.shape[-1]}")
    g = gaussian_window()
    kernel = Tensor(np.outer(g, g)[None, None].astype(a.dtype))
    c1, c2 = K1**2, K2**2
    levels = len(MS_SSIM_WEIGHTS)
    value = None
    for level, weight in enumerate(MS_SSIM_WEIGHTS):
        mu_a = _blur_valid(a, kernel)
        mu_b = _blur_valid(b, kernel)
        mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
        var_a = _blur_valid(a * a, kernel) - mu_aa
        var_b = _blur_valid(b * b, kernel) - mu_bb
        cov = _blur_valid(a * b, kernel) - mu_ab
        cs_map = (2.0 * cov + c2) / (var_a + var_b + c2)
        if level < levels - 1:
            term = F.mean(cs_map, axis=(2, 3))
            a, b = F.avg_pool2d(a), F.avg_pool2d(b)
        else:
            lum = (2.0 * mu_ab + c1) / (mu_aa + mu_bb + c1)
            term = F.mean(lum * cs_map, axis=(2, 3))
        factor = F.power(F.relu(term), weight)
        value = factor if value is None else value * factor
    return F.mean(value)


@dataclass
class RdLossBreakdown:
    total: float
    distortion: float
    rate_bpp: float
    aux: float = 0.0
    lmbda: float = 0.0
    metric: str = "mse"
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    def recompose(self) -> float:
        """Recompute the total from the breakdown fields."""
        if self.metric == "mse":
            return self.lmbda * 255.0**2 * self.distortion + self.rate_bpp
        return self.lmbda * (1.0 - self.distortion) + self.rate_bpp

    def as_dict(self) -> dict:
        return {"total": self.total, "distortion": self.distortion, "rate_bpp": self.rate_bpp, "aux": self.aux}


def rd_loss(x, x_hat, likelihoods, lmbda: float, metric: str = "mse") -> RdLossBreakdown:
    """``lambda * 255^2 * MSE + R`` or ``lambda * (1 - MS-SSIM) + R``.

    ``R`` is the estimated rate in bits per pixel of the batch
    (``sum(-log2 p) / (N * H * W)``). The differentiable total is in
    ``.loss``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if isinstance(likelihoods, dict):
        likelihoods = list(likelihoods.values())
    if not likelihoods:
        raise ContractError("rd_loss needs at least one likelihood tensor")
    if x.shape != x_hat.shape:
        raise DimensionError(f"rd_loss: x {x.shape} and x_hat {x_hat.shape} differ")
    n, _, h, w = x.shape
    bits = None
    for lik in likelihoods:
        term = F.sum(-F.log2(lik))
        bits = term if bits is None else bits + term
    rate = bits / float(n * h * w)
    if metric == "mse":
        diff = x_hat - x
        dist = F.mean(diff * diff)
        total = lmbda * 255.0**2 * dist + rate
    elif metric == "ms-ssim":
        dist = ms_ssim_tensor(x_hat, x)
        total = lmbda * (1.0 - dist) + rate
    else:
        raise InputError(f"unknown metric {metric!r}")
    out = RdLossBreakdown(0.0, dist.item(), rate.item(), 0.0, lmbda, metric, total)
    out.total = out.recompose()
    return out
