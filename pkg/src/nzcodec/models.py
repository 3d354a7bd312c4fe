"""End-to-end compression models: factorized prior and (mean-)scale hyperpriors."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import rangecoder
from .container import METRIC_IDS, MODEL_IDS, BitstreamContainer
from .entropy_models import EntropyBottleneck, GaussianConditional, dequantize_symbols, estimate_bits, quantize
from .errors import ContractError, CorruptStreamError, DimensionError, InputError, ModelMismatchError
from .ndtensor import GDN, Conv2d, ConvTranspose2d, LeakyReLU, Module, ReLU, Sequential, Tensor, no_grad
from .ndtensor import functional as F

MIN_SIDE = 64
QUALITIES = range(1, 9)


def channels_for_quality(quality: int):
    """(N, M) for a quality index: 192 bottleneck channels up to 5, 320 above."""
    if quality not in QUALITIES:
        raise InputError(f"quality must be in 1..8, got {quality}")
    return (128, 192) if quality <= 5 else (192, 320)


@dataclass(frozen=True)
class ArchitectureConfig:
    model_id: str = "factorized"
    quality: int = 1
    metric: str = "mse"
    N: int | None = None
    M: int | None = None

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise InputError(f"unknown model {self.model_id!r}; choose from {sorted(MODEL_IDS)}")
        if self.metric not in METRIC_IDS:
            raise InputError(f"unknown metric {self.metric!r}; choose from {sorted(METRIC_IDS)}")
        default_n, default_m = channels_for_quality(self.quality)
        if self.N is None:
            object.__setattr__(self, "N", default_n)
        if self.M is None:
            object.__setattr__(self, "M", default_m)

    @property
    def triple(self):
        return MODEL_IDS[self.model_id], self.quality, METRIC_IDS[self.metric]

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# padding


def pad_reflect(x: np.ndarray, multiple: int):
    """Reflect-pad bottom/right so H and W become multiples of ``multiple``."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    widths = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, widths, mode="reflect"), (h, w)


def crop(x: np.ndarray, dims) -> np.ndarray:
    h, w = dims
    return x[..., :h, :w]


# ---------------------------------------------------------------------------
# models


class CodecModel(Module):
    """Common train/eval/compress logic; subclasses define the transforms."""

    n_streams = 1
    multiple = 16

    def __init__(self, config: ArchitectureConfig, seed: int = 0):
        self.config = config
        self.seed = seed

    # -- helpers -------------------------------------------------------
    def main_parameters(self):
        return [p for name, p in self.named_parameters() if not name.endswith("quantiles")]

    def aux_parameters(self):
        return [p for name, p in self.named_parameters() if name.endswith("quantiles")]

    def aux_loss(self) -> Tensor:
        return self.bottleneck.aux_loss()

    def update(self):
        """Build the CDF tables needed by :meth:`compress`."""
        for m in self.modules():
            if isinstance(m, (EntropyBottleneck, GaussianConditional)):
                m.build_cdf_tables()
        return self

    @property
    def tables_ready(self) -> bool:
        return all(
            m.table is not None for m in self.modules() if isinstance(m, (EntropyBottleneck, GaussianConditional))
        )

    def _check_input(self, x, need_multiple: bool):
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected images of shape (N, 3, H, W), got {x.shape}")
        h, w = x.shape[2:]
        if h < MIN_SIDE or w < MIN_SIDE:
            raise InputError(f"H and W must be at least {MIN_SIDE} pixels, got {h}x{w}")
        if need_multiple and (h % self.multiple or w % self.multiple):
            raise InputError(f"H and W must be multiples of {self.multiple} here, got {h}x{w}")

    # -- forward passes --------------------------------------------------
    def forward_train(self, x, rng=None):
        """Noise-quantized pass: ``{"x_hat": Tensor, "likelihoods": {name: Tensor}}``."""
        if not self.training:
            raise ContractError("forward_train requires train mode")
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x, need_multiple=True)
        return self._forward(x, rng)

    def forward_eval(self, x):
        """Rounded pass on a padded batch, without graph recording."""
        if self.training:
            raise ContractError("forward_eval requires eval mode")
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x, need_multiple=True)
        with no_grad():
            return self._forward(x, None)

    def forward(self, x, rng=None):
        return self.forward_train(x, rng) if self.training else self.forward_eval(x)

    def synthesize(self, y_hat: Tensor) -> Tensor:
        return self.g_s(y_hat)

    # -- coding --------------------------------------------------------
    def compress(self, x) -> BitstreamContainer:
        if self.training:
            raise ContractError("compress requires eval mode")
        if not self.tables_ready:
            raise ContractError("compress requires CDF tables; call update() first")
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        if x.shape[0] != 1:
            raise InputError(f"compress takes a single image, got batch of {x.shape[0]}")
        self._check_input(x, need_multiple=False)
        xp, (h, w) = pad_reflect(x, self.multiple)
        with no_grad():
            streams = self._encode(Tensor(xp))
        t = self.config.triple
        return BitstreamContainer(t[0], t[1], t[2], h, w, streams)

    def decompress(self, container) -> np.ndarray:
        y_hat, (h, w) = self._decode_container(container)
        with no_grad():
            x_hat = self.synthesize(Tensor(y_hat)).data
        return np.clip(crop(x_hat, (h, w)), 0.0, 1.0)

    def decode_latents(self, container) -> np.ndarray:
        """Quantized latents recovered from a container, before synthesis."""
        return self._decode_container(container)[0]

    def _decode_container(self, container):
        if isinstance(container, (bytes, bytearray)):
            container = BitstreamContainer.from_bytes(container)
        if self.training:
            raise ContractError("decompress requires eval mode")
        if not self.tables_ready:
            raise ContractError("decompress requires CDF tables; call update() first")
        if container.triple != self.config.triple:
            raise ModelMismatchError(
                f"container was produced by (model, quality, metric) = {container.triple}, "
                f"this model is {self.config.triple}"
            )
        if len(container.streams) != self.n_streams:
            raise CorruptStreamError(f"expected {self.n_streams} stream(s), found {len(container.streams)}")
        h, w = container.orig_h, container.orig_w
        ph = h + (-h) % self.multiple
        pw = w + (-w) % self.multiple
        with no_grad():
            y_hat = self._decode(container.streams, (ph // 16, pw // 16))
        return y_hat.data, (h, w)

    def reconstruct(self, x) -> np.ndarray:
        """Direct quantized forward pass, cropped and clamped like :meth:`decompress`."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        self._check_input(x, need_multiple=False)
        xp, dims = pad_reflect(x, self.multiple)
        out = self.forward_eval(xp)
        return np.clip(crop(out["x_hat"].data, dims), 0.0, 1.0)

    def quantized_latents(self, x) -> np.ndarray:
        """Quantized latents of the direct (encoder-side) pass over padded ``x``."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        xp, _ = pad_reflect(x, self.multiple)
        return self.forward_eval(xp)["y_hat"].data

    def estimate_bits(self, x) -> float:
        """Entropy estimate of the rounded latents of (padded) ``x``."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        xp, _ = pad_reflect(x, self.multiple)
        out = self.forward_eval(xp)
        return estimate_bits(out["likelihoods"].values())

    def latent_symbols(self, x) -> dict:
        """Integer symbols the encoder would code for ``x`` (diagnostics/tests)."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        xp, _ = pad_reflect(x, self.multiple)
        with no_grad():
            return self._symbols(Tensor(xp))

    # -- subclass hooks --------------------------------------------------
    def _forward(self, x, rng):
        raise NotImplementedError

    def _encode(self, xp: Tensor) -> list:
        raise NotImplementedError

    def _decode(self, streams, latent_hw) -> Tensor:
        raise NotImplementedError

    def _symbols(self, xp: Tensor) -> dict:
        raise NotImplementedError


def _analysis(n, m, rng):
    return Sequential(
        Conv2d(3, n, 5, 2, rng), GDN(n), Conv2d(n, n, 5, 2, rng), GDN(n), Conv2d(n, n, 5, 2, rng), GDN(n),
        Conv2d(n, m, 5, 2, rng),
    )


def _synthesis(n, m, rng):
    return Sequential(
        ConvTranspose2d(m, n, 5, 2, rng), GDN(n, inverse=True), ConvTranspose2d(n, n, 5, 2, rng),
        GDN(n, inverse=True), ConvTranspose2d(n, n, 5, 2, rng), GDN(n, inverse=True),
        ConvTranspose2d(n, 3, 5, 2, rng),
    )


def _channel_rows(shape):
    return np.broadcast_to(np.arange(shape[1])[None, :, None, None], shape)


def _medians(bottleneck, dtype=np.float32):
    return bottleneck.medians.astype(dtype)[None, :, None, None]


class FactorizedPrior(CodecModel):
    """Analysis/synthesis transforms with a fully factorized latent prior."""

    n_streams = 1
    multiple = 16

    def __init__(self, config: ArchitectureConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng(seed)
        n, m = config.N, config.M
        self.g_a = _analysis(n, m, rng)
        self.g_s = _synthesis(n, m, rng)
        self.bottleneck = EntropyBottleneck(m, rng=rng)

    def _forward(self, x, rng):
        y = self.g_a(x)
        y_hat, y_lik = self.bottleneck(y, rng=rng)
        return {"x_hat": self.synthesize(y_hat), "likelihoods": {"y": y_lik}, "y": y, "y_hat": y_hat}

    def _symbols(self, xp):
        y = self.g_a(xp)
        return {"y": quantize(y, "symbols", means=_medians(self.bottleneck))}

    def _encode(self, xp):
        sym = self._symbols(xp)["y"]
        chunk = rangecoder.encode(sym.ravel(), _channel_rows(sym.shape).ravel(), self.bottleneck.table)
        return [chunk.data]

    def _decode(self, streams, latent_hw):
        shape = (1, self.config.M) + latent_hw
        rows = _channel_rows(shape).ravel()
        sym = rangecoder.decode(rangecoder.EncodedChunk(streams[0], rows.size), rows, self.bottleneck.table)
        return dequantize_symbols(sym.reshape(shape), _medians(self.bottleneck))


class ScaleHyperprior(CodecModel):
    """Hyperprior predicting a per-element Gaussian scale for the latents."""

    n_streams = 2
    multiple = 64

    def __init__(self, config: ArchitectureConfig, seed: int = 0):
        super().__init__(config, seed)
        rng = np.random.default_rng(seed)
        n, m = config.N, config.M
        self.g_a = _analysis(n, m, rng)
        self.g_s = _synthesis(n, m, rng)
        self.h_a = Sequential(
            Conv2d(m, n, 3, 1, rng), ReLU(), Conv2d(n, n, 5, 2, rng), ReLU(), Conv2d(n, n, 5, 2, rng)
        )
        self.h_s = Sequential(
            ConvTranspose2d(n, n, 5, 2, rng), ReLU(), ConvTranspose2d(n, n, 5, 2, rng), ReLU(),
            Conv2d(n, m, 3, 1, rng), ReLU(),
        )
        self.bottleneck = EntropyBottleneck(n, rng=rng)
        self.conditional = GaussianConditional()

    def _hyper_analysis(self, y):
        return self.h_a(F.abs(y))

    def _params(self, z_hat):
        return self.h_s(z_hat), None

    def _forward(self, x, rng):
        y = self.g_a(x)
        z = self._hyper_analysis(y)
        z_hat, z_lik = self.bottleneck(z, rng=rng)
        scales, means = self._params(z_hat)
        y_hat, y_lik = self.conditional(y, scales, means, rng=rng)
        return {"x_hat": self.synthesize(y_hat), "likelihoods": {"y": y_lik, "z": z_lik}, "y": y, "y_hat": y_hat}

    def _symbols(self, xp):
        y = self.g_a(xp)
        z = self._hyper_analysis(y)
        z_sym = quantize(z, "symbols", means=_medians(self.bottleneck))
        z_hat = dequantize_symbols(z_sym, _medians(self.bottleneck))
        scales, means = self._params(z_hat)
        y_sym = quantize(y, "symbols", means=means)
        return {"y": y_sym, "z": z_sym, "y_rows": self.conditional.index_for_scales(scales)}

    def _encode(self, xp):
        s = self._symbols(xp)
        z_chunk = rangecoder.encode(s["z"].ravel(), _channel_rows(s["z"].shape).ravel(), self.bottleneck.table)
        y_chunk = rangecoder.encode(s["y"].ravel(), s["y_rows"].ravel(), self.conditional.table)
        return [z_chunk.data, y_chunk.data]

    def _decode(self, streams, latent_hw):
        zh, zw = latent_hw[0] // 4, latent_hw[1] // 4
        z_shape = (1, self.config.N, zh, zw)
        z_rows = _channel_rows(z_shape).ravel()
        z_sym = rangecoder.decode(rangecoder.EncodedChunk(streams[0], z_rows.size), z_rows, self.bottleneck.table)
        z_hat = dequantize_symbols(z_sym.reshape(z_shape), _medians(self.bottleneck))
        scales, means = self._params(z_hat)
        rows = self.conditional.index_for_scales(scales)
        y_sym = rangecoder.decode(rangecoder.EncodedChunk(streams[1], rows.size), rows.ravel(), self.conditional.table)
        return dequantize_symbols(y_sym.reshape(rows.shape), None if means is None else means.data)


class MeanScaleHyperprior(ScaleHyperprior):
    """Hyperprior predicting both mean and scale of each latent element."""

    def __init__(self, config: ArchitectureConfig, seed: int = 0):
        CodecModel.__init__(self, config, seed)
        rng = np.random.default_rng(seed)
        n, m = config.N, config.M
        self.g_a = _analysis(n, m, rng)
        self.g_s = _synthesis(n, m, rng)
        self.h_a = Sequential(
            Conv2d(m, n, 3, 1, rng), LeakyReLU(), Conv2d(n, n, 5, 2, rng), LeakyReLU(), Conv2d(n, n, 5, 2, rng)
        )
        self.h_s = Sequential(
            ConvTranspose2d(n, m, 5, 2, rng), LeakyReLU(), ConvTranspose2d(m, m * 3 // 2, 5, 2, rng), LeakyReLU(),
            Conv2d(m * 3 // 2, m * 2, 3, 1, rng),
        )
        self.bottleneck = EntropyBottleneck(n, rng=rng)
        self.conditional = GaussianConditional()

    def _hyper_analysis(self, y):
        return self.h_a(y)

    def _params(self, z_hat):
        out = self.h_s(z_hat)
        m = self.config.M
        return out[:, :m], out[:, m:]


MODEL_CLASSES = {
    "factorized": FactorizedPrior,
    "scale_hyperprior": ScaleHyperprior,
    "mean_scale_hyperprior": MeanScaleHyperprior,
}


def build_model(model_id="factorized", quality=1, metric="mse", N=None, M=None, seed=0) -> CodecModel:
    config = ArchitectureConfig(model_id, quality, metric, N, M)
    return MODEL_CLASSES[model_id](config, seed=seed)
