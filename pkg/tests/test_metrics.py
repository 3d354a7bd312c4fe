import math

import numpy as np
import pytest

from nzcodec.errors import DimensionError, InputError
from nzcodec.losses import ms_ssim_tensor
from nzcodec.metrics import bpp, gaussian_window, ms_ssim, mse, psnr
from nzcodec.ndtensor import Tensor


def test_psnr_closed_form():
    a = np.zeros((3, 8, 8))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, a) == math.inf
    assert mse(a, a + 0.5) == pytest.approx(0.25)
    with pytest.raises(DimensionError):
        psnr(a, np.zeros((3, 8, 7)))


def test_ms_ssim_identity_and_range(rng):
    a = rng.uniform(size=(3, 176, 190))
    assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert 0.0 < ms_ssim(a, b) < 1.0
    with pytest.raises(InputError):
        ms_ssim(a[:, :100], b[:, :100])


def test_window():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0)
    assert g[5] == g.max()


def test_tensor_ms_ssim_matches_numpy(rng):
    a = rng.uniform(size=(2, 3, 176, 176))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert ms_ssim_tensor(Tensor(a), Tensor(b)).item() == pytest.approx(ms_ssim(a, b), abs=1e-9)


def test_bpp():
    assert bpp(800, 10, 10) == 8.0
    with pytest.raises(InputError):
        bpp(1, 0, 4)
