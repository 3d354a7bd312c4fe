"""Probability models over quantized latents and their integer CDF tables.

``EntropyBottleneck`` is a fully factorized, learned per-channel density;
``GaussianConditional`` assigns each element a discretized Gaussian given a
predicted scale (and optionally mean). Both produce per-element bin
likelihoods for training and :class:`QuantizedCdfTable` rows for coding.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ContractError, DimensionError, FormatError, NumericError, TableCapacityError
from .ndtensor import Module, Parameter, Tensor
from .ndtensor import functional as F

TAIL_MASS = 1e-9
LIKELIHOOD_FLOOR = 1e-9
PRECISION = 16
SCALE_MIN, SCALE_MAX, SCALE_LEVELS = 0.11, 256.0, 64


def default_scale_table() -> np.ndarray:
    return np.exp(np.linspace(math.log(SCALE_MIN), math.log(SCALE_MAX), SCALE_LEVELS))


# ---------------------------------------------------------------------------
# quantization


def quantize(y, mode: str, means=None, rng=None, training: bool = True):
    """Quantize latents.

    ``noise`` adds U(-0.5, 0.5) (training only) and returns a Tensor;
    ``symbols`` returns ``round(y - means)`` as int32; ``dequantize`` returns
    ``round(y - means) + means`` as a constant Tensor.
    """
    data = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float32)
    mdata = None
    if means is not None:
        mdata = means.data if isinstance(means, Tensor) else np.asarray(means, dtype=data.dtype)
        try:
            compatible = np.broadcast_shapes(mdata.shape, data.shape) == data.shape
        except ValueError:
            compatible = False
        if not compatible:
            raise DimensionError(f"quantize: means shape {mdata.shape} incompatible with {data.shape}")
    if mode == "noise":
        if not training:
            raise ContractError("quantize: noise mode is only valid in training")
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.uniform(-0.5, 0.5, size=data.shape).astype(data.dtype)
        y = y if isinstance(y, Tensor) else Tensor(data)
        return y + Tensor(noise)
    centred = data if mdata is None else data - mdata
    rounded = np.rint(centred)
    if mode == "symbols":
        return rounded.astype(np.int32)
    if mode == "dequantize":
        return Tensor(rounded if mdata is None else rounded + mdata)
    raise ValueError(f"unknown quantization mode {mode!r}")


def dequantize_symbols(symbols: np.ndarray, means=None, dtype=np.float32) -> Tensor:
    out = symbols.astype(dtype)
    if means is not None:
        out = out + np.asarray(means, dtype=dtype)
    return Tensor(out)


def estimate_bits(likelihoods) -> float:
    """Sum of ``-log2 p`` over every element of every likelihood array."""
    total = 0.0
    for lik in likelihoods:
        p = np.asarray(lik.data if isinstance(lik, Tensor) else lik, dtype=np.float64)
        if p.size and (np.any(~(p > 0)) or np.any(p > 1 + 1e-6)):
            raise NumericError("estimate_bits: likelihoods must lie in (0, 1]")
        total += float(-np.sum(np.log2(p)))
    return total


# ---------------------------------------------------------------------------
# integer CDF tables


@dataclass
class QuantizedCdfTable:
    """One integer CDF per row; the last slot of each row is the escape symbol.

    ``cdfs[r]`` has ``support + 2`` entries, starts at 0 and ends at
    ``2**precision``; symbol ``s`` of row ``r`` maps to slot ``s - offsets[r]``.
    """

    offsets: np.ndarray
    cdfs: list = field(default_factory=list)
    precision: int = PRECISION

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.cdfs = [np.asarray(c, dtype=np.int64) for c in self.cdfs]
        if len(self.offsets) != len(self.cdfs):
            raise DimensionError("QuantizedCdfTable: one offset per row required")

    def __len__(self):
        return len(self.cdfs)

    def support(self, row: int) -> int:
        return len(self.cdfs[row]) - 2

    def probability(self, row: int, symbol: int) -> float:
        slot = symbol - int(self.offsets[row])
        cdf = self.cdfs[row]
        if not 0 <= slot < len(cdf) - 2:
            slot = len(cdf) - 2
        return (cdf[slot + 1] - cdf[slot]) / float(1 << self.precision)

    def validate(self):
        total = 1 << self.precision
        for r, cdf in enumerate(self.cdfs):
            if cdf[0] != 0 or cdf[-1] != total:
                raise FormatError(f"row {r}: cdf must span [0, {total}]")
            if np.any(np.diff(cdf) < 1):
                raise FormatError(f"row {r}: every symbol needs frequency >= 1")
        return self

    def __eq__(self, other):
        return (
            isinstance(other, QuantizedCdfTable)
            and self.precision == other.precision
            and np.array_equal(self.offsets, other.offsets)
            and len(self.cdfs) == len(other.cdfs)
            and all(np.array_equal(a, b) for a, b in zip(self.cdfs, other.cdfs))
        )

    def to_bytes(self) -> bytes:
        """precision u8, rows u32, then per row: offset i32, length u16, cdf u32[length]."""
        parts = [struct.pack("<BI", self.precision, len(self.cdfs))]
        for off, cdf in zip(self.offsets, self.cdfs):
            parts.append(struct.pack("<iH", int(off), len(cdf)))
            parts.append(cdf.astype("<u4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, pos: int = 0):
        """Parse a table; returns ``(table, next_position)``."""
        try:
            precision, rows = struct.unpack_from("<BI", buf, pos)
            pos += 5
            offsets, cdfs = [], []
            for _ in range(rows):
                off, length = struct.unpack_from("<iH", buf, pos)
                pos += 6
                end = pos + 4 * length
                if end > len(buf):
                    raise FormatError("truncated cdf table")
                cdfs.append(np.frombuffer(buf[pos:end], dtype="<u4").astype(np.int64))
                offsets.append(off)
                pos = end
        except struct.error as exc:
            raise FormatError(f"truncated cdf table: {exc}") from None
        return cls(np.array(offsets, dtype=np.int64), cdfs, precision).validate(), pos


def pmf_to_quantized_cdf(pmf, tail_mass: float, precision: int = PRECISION) -> np.ndarray:
    """Integer CDF over ``pmf`` plus one escape slot carrying ``tail_mass``.

    Frequencies are floored, every slot is raised to at least 1, the deficit
    is handed out by largest remainder and any surplus is taken from the most
    probable symbol.
    """
    total = 1 << precision
    probs = np.append(np.clip(np.asarray(pmf, dtype=np.float64), 0.0, None), max(float(tail_mass), 0.0))
    n = len(probs)
    if n > total or n + 1 > 0xFFFF:
        raise TableCapacityError(f"support of {n - 1} symbols exceeds capacity of a {precision}-bit table")
    s = probs.sum()
    if not np.isfinite(s) or s <= 0:
        raise NumericError("pmf_to_quantized_cdf: probabilities must have a positive finite sum")
    scaled = probs / s * total
    floors = np.floor(scaled)
    freq = np.maximum(floors.astype(np.int64), 1)
    deficit = total - int(freq.sum())
    if deficit > 0:
        remainder = np.where(floors >= 1, scaled - floors, -1.0)
        order = np.argsort(-remainder, kind="stable")
        eligible = order[remainder[order] >= 0][:deficit]
        freq[eligible] += 1
        deficit = total - int(freq.sum())
    while deficit != 0:
        top = int(np.argmax(freq))
        change = deficit if deficit > 0 else max(deficit, 1 - int(freq[top]))
        if change == 0:
            raise TableCapacityError("cannot renormalize table: every slot already at frequency 1")
        freq[top] += change
        deficit -= change
    return np.concatenate([[0], np.cumsum(freq)]).astype(np.int64)


# ---------------------------------------------------------------------------
# factorized entropy bottleneck


class EntropyBottleneck(Module):
    """Learned per-channel density over latents.

    The cumulative is ``c(x) = sigmoid(f_K(...f_1(x)))`` where each layer is
    ``f(x) = softplus(H) @ x + b`` followed (except the last) by
    ``x + tanh(a) * tanh(x)``, which keeps every layer monotone.
    """

    def __init__(
        self,
        channels: int,
        filters=(3, 3, 3),
        init_scale: float = 10.0,
        tail_mass: float = TAIL_MASS,
        likelihood_floor: float = LIKELIHOOD_FLOOR,
        precision: int = PRECISION,
        rng=None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.filters = tuple(filters)
        self.tail_mass = tail_mass
        self.likelihood_floor = likelihood_floor
        self.precision = precision
        self.table = None
        widths = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(self.filters) + 1))
        self._depth = len(self.filters) + 1
        for i in range(self._depth):
            init = math.log(math.expm1(1.0 / scale / widths[i + 1]))
            setattr(self, f"matrix{i}", Parameter(np.full((channels, widths[i + 1], widths[i]), init)))
            setattr(self, f"bias{i}", Parameter(rng.uniform(-0.5, 0.5, (channels, widths[i + 1], 1))))
            if i < self._depth - 1:
                setattr(self, f"factor{i}", Parameter(np.zeros((channels, widths[i + 1], 1))))
        q = init_scale * math.log((1.0 - tail_mass) / tail_mass)
        self.quantiles = Parameter(np.tile(np.array([-q, 0.0, q]), (channels, 1, 1)))

    # -- parameters ------------------------------------------------------
    def density_parameters(self):
        return [p for name, p in self.named_parameters() if name != "quantiles"]

    @property
    def medians(self) -> np.ndarray:
        return self.quantiles.data[:, 0, 1]

    # -- cumulative -----------------------------------------------------
    def logits_cumulative(self, x: Tensor, stop_gradient: bool = False) -> Tensor:
        """Logit of the cumulative at ``x`` of shape (C, 1, L)."""

        def get(name):
            p = getattr(self, name)
            return Tensor(p.data) if stop_gradient else p

        logits = x
        for i in range(self._depth):
            logits = F.matmul(F.softplus(get(f"matrix{i}")), logits) + get(f"bias{i}")
            if i < self._depth - 1:
                logits = logits + F.tanh(get(f"factor{i}")) * F.tanh(logits)
        return logits

    def logits_numpy(self, x: np.ndarray) -> np.ndarray:
        """64-bit evaluation of :meth:`logits_cumulative` without a graph."""
        logits = np.asarray(x, dtype=np.float64)
        for i in range(self._depth):
            m = np.logaddexp(0.0, getattr(self, f"matrix{i}").data.astype(np.float64))
            logits = np.matmul(m, logits) + getattr(self, f"bias{i}").data.astype(np.float64)
            if i < self._depth - 1:
                a = np.tanh(getattr(self, f"factor{i}").data.astype(np.float64))
                logits = logits + a * np.tanh(logits)
        return logits

    def cdf(self, x) -> np.ndarray:
        """Cumulative evaluated at per-channel points ``x`` of shape (C, L)."""
        x = np.asarray(x, dtype=np.float64)
        return special.expit(self.logits_numpy(x[:, None, :]))[:, 0, :]

    # -- likelihoods ----------------------------------------------------
    def _to_channels(self, y: Tensor) -> Tensor:
        if y.ndim != 4 or y.shape[1] != self.channels:
            got = y.shape[1] if y.ndim > 1 else y.shape
            raise DimensionError(f"bottleneck: channel axis 1 has {got}, model has {self.channels}")
        return F.transpose(y, (1, 0, 2, 3)).reshape(self.channels, 1, -1)

    def likelihood(self, v: Tensor) -> Tensor:
        """Bin probability ``c(v + 0.5) - c(v - 0.5)`` floored at ``likelihood_floor``."""
        n, c, h, w = v.shape
        flat = self._to_channels(v)
        lower = self.logits_cumulative(flat - 0.5)
        upper = self.logits_cumulative(flat + 0.5)
        # evaluate on the side of the median where both sigmoids are small
        sign = Tensor(np.where(lower.data + upper.data > 0, -1.0, 1.0).astype(v.dtype))
        lik = F.abs(F.sigmoid(sign * upper) - F.sigmoid(sign * lower))
        lik = F.lower_bound(lik, self.likelihood_floor)
        return F.transpose(lik.reshape(c, n, h, w), (1, 0, 2, 3))

    def forward(self, y: Tensor, rng=None):
        """Return ``(y_hat, likelihoods)`` using noise (train) or rounding (eval)."""
        if self.training:
            y_hat = quantize(y, "noise", rng=rng)
        else:
            y_hat = quantize(y, "dequantize", means=self.medians[None, :, None, None].astype(y.dtype))
        return y_hat, self.likelihood(y_hat)

    def aux_loss(self) -> Tensor:
        """Distance of the three quantile points from their target cumulatives.

        Density parameters are held fixed, so only ``quantiles`` receives a
        gradient.
        """
        logits = self.logits_cumulative(self.quantiles, stop_gradient=True)
        low = F.sigmoid(logits[:, :, 0])
        mid = F.sigmoid(logits[:, :, 1])
        upper_tail = F.sigmoid(-logits[:, :, 2])
        tm = self.tail_mass
        return F.sum(F.abs(low - tm) + F.abs(mid - 0.5) + F.abs(upper_tail - tm))

    # -- coding ---------------------------------------------------------
    def build_cdf_tables(self) -> QuantizedCdfTable:
        """One row per channel; symbols are ``round(y - median)``."""
        q = self.quantiles.data.astype(np.float64)[:, 0, :]
        medians = self.medians.astype(np.float64)
        if not np.all(np.isfinite(q)):
            raise NumericError("bottleneck quantiles are not finite")
        minima = np.maximum(np.ceil(medians - q[:, 0]), 0).astype(np.int64)
        maxima = np.maximum(np.ceil(q[:, 2] - medians), 0).astype(np.int64)
        lengths = minima + maxima + 1
        if np.any(lengths + 2 > 0xFFFF):
            ch = int(np.argmax(lengths))
            raise TableCapacityError(f"channel {ch}: support of {lengths[ch]} symbols too wide")
        width = int(lengths.max())
        edges = np.arange(width + 1, dtype=np.float64)[None, :] - minima[:, None] + medians[:, None] - 0.5
        all_logits = self.logits_numpy(edges[:, None, :])[:, 0, :]
        cdfs = []
        for ch in range(self.channels):
            logits = all_logits[ch, : lengths[ch] + 1]
            # difference of sigmoids taken on the far side of the median for accuracy
            flip = np.where(logits[:-1] + logits[1:] > 0, -1.0, 1.0)
            pmf = np.abs(special.expit(flip * logits[1:]) - special.expit(flip * logits[:-1]))
            tail = special.expit(logits[0]) + special.expit(-logits[-1])
            cdfs.append(pmf_to_quantized_cdf(pmf, tail, self.precision))
        self.table = QuantizedCdfTable(-minima, cdfs, self.precision)
        return self.table


# ---------------------------------------------------------------------------
# Gaussian conditional


class GaussianConditional(Module):
    """Discretized Gaussian with per-element predicted scale (and mean)."""

    def __init__(
        self,
        scale_table=None,
        tail_mass: float = TAIL_MASS,
        likelihood_floor: float = LIKELIHOOD_FLOOR,
        precision: int = PRECISION,
    ):
        table = default_scale_table() if scale_table is None else np.asarray(scale_table, dtype=np.float64)
        if table.ndim != 1 or len(table) == 0 or np.any(table <= 0) or np.any(np.diff(table) <= 0):
            raise ValueError("scale_table must be strictly increasing and positive")
        self.scale_table = table
        self.tail_mass = tail_mass
        self.likelihood_floor = likelihood_floor
        self.precision = precision
        self.table = None

    @property
    def scale_bound(self) -> float:
        return float(self.scale_table[0])

    def likelihood(self, v: Tensor, scales: Tensor, means: Tensor | None = None) -> Tensor:
        if v.shape != scales.shape or (means is not None and means.shape != v.shape):
            raise DimensionError(f"gaussian likelihood: shapes {v.shape}, {scales.shape} differ")
        if np.any(np.isnan(scales.data)):
            raise NumericError("gaussian likelihood: NaN scale")
        values = v - means if means is not None else v
        s = F.lower_bound(scales, self.scale_bound)
        values = F.abs(values)
        upper = F.normal_cdf((0.5 - values) / s)
        lower = F.normal_cdf((-0.5 - values) / s)
        return F.lower_bound(upper - lower, self.likelihood_floor)

    def forward(self, y: Tensor, scales: Tensor, means: Tensor | None = None, rng=None):
        if self.training:
            y_hat = quantize(y, "noise", rng=rng)
        else:
            y_hat = quantize(y, "dequantize", means=means)
        return y_hat, self.likelihood(y_hat, scales, means)

    def index_for_scales(self, scales) -> np.ndarray:
        """Row of the smallest table entry >= each scale (clamped to the last row)."""
        s = np.asarray(scales.data if isinstance(scales, Tensor) else scales, dtype=np.float64)
        idx = np.searchsorted(self.scale_table, s, side="left")
        return np.minimum(idx, len(self.scale_table) - 1).astype(np.int64)

    def build_cdf_tables(self) -> QuantizedCdfTable:
        """One row per scale-table entry, support ``[-k, k]`` at the tail points."""
        multiplier = -stats.norm.ppf(self.tail_mass / 2.0)
        centres = np.ceil(self.scale_table * multiplier).astype(np.int64)
        cdfs = []
        for sigma, k in zip(self.scale_table, centres):
            if 2 * k + 3 > 0xFFFF:
                raise TableCapacityError(f"scale {sigma}: support of {2 * k + 1} symbols too wide")
            values = np.abs(np.arange(-k, k + 1, dtype=np.float64))
            pmf = special.ndtr((0.5 - values) / sigma) - special.ndtr((-0.5 - values) / sigma)
            tail = 2.0 * special.ndtr(-(k + 0.5) / sigma)
            cdfs.append(pmf_to_quantized_cdf(pmf, tail, self.precision))
        self.table = QuantizedCdfTable(-centres, cdfs, self.precision)
        return self.table
