"""scikit-learn style facade: fit trains, transform compresses, inverse_transform decodes."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionError, InputError
from .losses import lambda_for_quality
from .metrics import ms_ssim, mse
from .models import MIN_SIDE, build_model
from .training import TrainingConfig, extract_random_patches, train


def check_images(X, min_side: int = MIN_SIDE) -> list:
    """Validate images and return them as a list of (3, H, W) float32 arrays in [0, 1].

    Accepts one (3, H, W) image, a (N, 3, H, W) batch or a list of images.
    ``uint8`` input is scaled by 1/255.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = X[None]
    items = list(X) if not isinstance(X, np.ndarray) else [x for x in X]
    if not items:
        raise InputError("expected at least one image")
    out = []
    for i, img in enumerate(items):
        raw = np.asarray(img)
        scale = 255.0 if raw.dtype == np.uint8 else 1.0
        arr = check_array(raw, dtype=np.float32, allow_nd=True, ensure_2d=False, ensure_min_samples=1) / scale
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise DimensionError(f"image {i}: expected shape (3, H, W), got {arr.shape}")
        if min(arr.shape[1:]) < min_side:
            raise InputError(f"image {i}: sides must be at least {min_side} pixels, got {arr.shape[1]}x{arr.shape[2]}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InputError(f"image {i}: float pixel values must lie in [0, 1]")
        out.append(arr.astype(np.float32, copy=False))
    return out


class LearnedImageCodec(TransformerMixin, BaseEstimator):
    """A trainable learned image codec.

    ``fit`` trains on random patches of the given images, ``transform``
    returns one serialized container per image, ``inverse_transform`` decodes
    them and ``score`` is the negative rate-distortion loss measured on real
    container bytes (higher is better).
    """

    def __init__(
        self,
        model="factorized",
        quality=1,
        metric="mse",
        N=None,
        M=None,
        lmbda=None,
        n_steps=1000,
        batch_size=8,
        patch_size=64,
        n_patches=500,
        eval_interval=500,
        learning_rate=1e-4,
        random_state=0,
    ):
        self.model = model
        self.quality = quality
        self.metric = metric
        self.N = N
        self.M = M
        self.lmbda = lmbda
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.n_patches = n_patches
        self.eval_interval = eval_interval
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _lmbda(self):
        return self.lmbda if self.lmbda is not None else lambda_for_quality(self.metric, self.quality)

    def fit(self, X, y=None):
        images = check_images(X, min_side=self.patch_size)
        seed = int(self.random_state or 0)
        config = TrainingConfig(
            lmbda=self._lmbda(),
            metric=self.metric,
            batch_size=self.batch_size,
            patch_size=self.patch_size,
            initial_lr=self.learning_rate,
            max_steps=self.n_steps,
            seed=seed,
            eval_interval=self.eval_interval,
        )
        train_set = extract_random_patches(images, self.patch_size, self.n_patches, seed=seed)
        eval_set = extract_random_patches(images, self.patch_size, max(1, self.n_patches // 10), seed=seed + 1)
        net = build_model(self.model, self.quality, self.metric, N=self.N, M=self.M, seed=seed)
        result = train(net, config, train_set, eval_set)
        self.model_ = net.eval().update()
        self.history_ = result.history
        self.n_steps_ = result.checkpoint.step
        return self

    def transform(self, X):
        """Object array of container bytes, one entry per image."""
        check_is_fitted(self, "model_")
        blobs = [self.model_.compress(img).to_bytes() for img in check_images(X)]
        out = np.empty(len(blobs), dtype=object)
        out[:] = blobs
        return out

    def inverse_transform(self, X):
        """Decoded images: a (N, 3, H, W) array when sizes agree, else a list."""
        check_is_fitted(self, "model_")
        images = [self.model_.decompress(bytes(b))[0] for b in X]
        shapes = {im.shape for im in images}
        return np.stack(images) if len(shapes) == 1 else images

    def predict(self, X):
        """Reconstructions after a full compress/decompress round trip."""
        return self.inverse_transform(self.transform(X))

    def score(self, X, y=None):
        images = check_images(X)
        blobs = self.transform(images)
        lmbda = self._lmbda()
        losses = []
        for img, blob in zip(images, blobs):
            rec = self.model_.decompress(blob)[0]
            rate = 8.0 * len(blob) / (img.shape[1] * img.shape[2])
            if self.metric == "mse":
                dist = lmbda * 255.0**2 * mse(np.rint(img * 255) / 255, np.rint(rec * 255) / 255)
            else:
                dist = lmbda * (1.0 - ms_ssim(img, rec))
            losses.append(dist + rate)
        return -float(np.mean(losses))
