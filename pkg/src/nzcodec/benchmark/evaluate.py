"""Per-image rate-distortion measurements for learned models and external codecs."""
from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DatasetError, InputError
from ..imageio import list_images, read_image
from ..metrics import MS_SSIM_MIN_SIDE, bpp, ms_ssim, psnr

log = logging.getLogger(__name__)


@dataclass
class RdPoint:
    codec: str
    quality: float
    bpp: float
    psnr: float
    ms_ssim: float | None
    enc_seconds: float | None = None
    dec_seconds: float | None = None
    image: str | None = None
    est_bpp: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    def metric(self, name: str) -> float:
        key = {"psnr": "psnr", "bpp": "bpp", "ms-ssim": "ms_ssim"}.get(name)
        if key is None:
            raise InputError(f"unknown metric {name!r}; choose psnr, bpp or ms-ssim")
        value = getattr(self, key)
        if value is None:
            raise InputError(f"{name} is unavailable for this image (too small for MS-SSIM?)")
        return value


@dataclass
class EvalResult:
    points: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def quality_metrics(original: np.ndarray, decoded: np.ndarray):
    """(PSNR, MS-SSIM or None) of one (3, H, W) pair, on 8-bit-rounded pixels."""
    a = np.rint(np.clip(original, 0, 1) * 255.0) / 255.0
    b = np.rint(np.clip(decoded, 0, 1) * 255.0) / 255.0
    ssim = ms_ssim(a, b) if min(a.shape[-2:]) >= MS_SSIM_MIN_SIDE else None
    return psnr(a, b), ssim


def _resolve_images(images):
    if isinstance(images, (str, Path)):
        d = Path(images)
        if not d.is_dir():
            raise DatasetError(f"{d} is not a directory")
        images = list_images(d)
    images = list(images)
    if not images:
        raise DatasetError("no PNG/PPM images to evaluate")
    return images


def _load_all(paths, result: EvalResult):
    loaded = []
    for p in paths:
        try:
            loaded.append((Path(p).name, read_image(p)))
        except InputError as exc:
            warnings.warn(f"skipping {p}: {exc}", stacklevel=3)
            result.skipped.append({"image": str(Path(p).name), "reason": str(exc)})
    if not loaded:
        raise DatasetError("none of the images could be read")
    return loaded


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def model_name(model) -> str:
    cfg = model.config
    return f"{cfg.model_id}-{cfg.metric}"


def eval_model(model, images, jobs: int = 1, timings: bool = True) -> EvalResult:
    """Compress, decompress and score every image with ``model``.

    ``bpp`` counts the bytes of the serialized container; the model's entropy
    estimate for the same image is kept alongside as ``est_bpp``.
    """
    if model.training or not model.tables_ready:
        raise InputError("eval_model needs a model in eval mode with CDF tables (call .eval().update())")
    result = EvalResult()
    loaded = _load_all(_resolve_images(images), result)
    name = model_name(model)

    def one(item):
        fname, img = item
        t0 = time.perf_counter()
        blob = model.compress(img).to_bytes()
        t1 = time.perf_counter()
        rec = model.decompress(blob)[0]
        t2 = time.perf_counter()
        h, w = img.shape[1:]
        p, s = quality_metrics(img, rec)
        return RdPoint(
            codec=name,
            quality=model.config.quality,
            bpp=bpp(8 * len(blob), h, w),
            psnr=p,
            ms_ssim=s,
            enc_seconds=t1 - t0 if timings else None,
            dec_seconds=t2 - t1 if timings else None,
            image=fname,
            est_bpp=model.estimate_bits(img) / (h * w),
        )

    result.points = _map(one, loaded, jobs)
    return result


def eval_codec(adapter, images, qualities, jobs: int = 1, timings: bool = True) -> EvalResult:
    """Run ``adapter`` on every (image, quality) pair and score the decoded output."""
    qualities = list(qualities)
    if not qualities:
        raise InputError("eval_codec needs at least one quality value")
    adapter.check_available()
    result = EvalResult()
    loaded = _load_all(_resolve_images(images), result)

    def one(item):
        (fname, img), q = item
        nbytes, decoded, enc_s, dec_s = adapter.run(img, q)
        p, s = quality_metrics(img, decoded)
        h, w = img.shape[1:]
        return RdPoint(
            codec=adapter.name,
            quality=q,
            bpp=bpp(8 * nbytes, h, w),
            psnr=p,
            ms_ssim=s,
            enc_seconds=enc_s if timings else None,
            dec_seconds=dec_s if timings else None,
            image=fname,
        )

    work = [(item, q) for item in loaded for q in qualities]
    result.points = _map(one, work, jobs)
    return result
