"""Serialized compressed image (``.nzb``).

Little-endian layout::

    magic        4 bytes  b"NZ01"
    version      u8       1
    model_id     u8       0 factorized, 1 scale_hyperprior, 2 mean_scale_hyperprior
    quality      u8       1..8
    metric       u8       0 mse, 1 ms-ssim
    orig_h       u16
    orig_w       u16
    stream_count u8
    per stream:  length u32, payload bytes

Symbol counts are not stored; they follow from the padded dimensions.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import CorruptStreamError, FormatError

MAGIC = b"NZ01"
VERSION = 1
MODEL_IDS = {"factorized": 0, "scale_hyperprior": 1, "mean_scale_hyperprior": 2}
METRIC_IDS = {"mse": 0, "ms-ssim": 1}
_HEADER = struct.Struct("<4sBBBBHHB")


@dataclass
class BitstreamContainer:
    model_id: int
    quality: int
    metric: int
    orig_h: int
    orig_w: int
    streams: list = field(default_factory=list)
    version: int = VERSION

    @property
    def triple(self):
        return self.model_id, self.quality, self.metric

    def payload_bytes(self) -> int:
        return sum(len(s) for s in self.streams)

    def to_bytes(self) -> bytes:
        if not (0 < self.orig_h <= 0xFFFF and 0 < self.orig_w <= 0xFFFF):
            raise FormatError(f"image dimensions {self.orig_h}x{self.orig_w} do not fit 16 bits")
        parts = [
            _HEADER.pack(
                MAGIC, self.version, self.model_id, self.quality, self.metric, self.orig_h, self.orig_w, len(self.streams)
            )
        ]
        for s in self.streams:
            parts.append(struct.pack("<I", len(s)))
            parts.append(bytes(s))
        return b"".join(parts)

    def __len__(self):
        return _HEADER.size + sum(4 + len(s) for s in self.streams)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "BitstreamContainer":
        buf = bytes(buf)
        if len(buf) < 5:
            raise CorruptStreamError("container shorter than its header")
        if buf[:4] != MAGIC:
            raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
        if buf[4] != VERSION:
            raise FormatError(f"unsupported container version {buf[4]}")
        if len(buf) < _HEADER.size:
            raise CorruptStreamError("container header is truncated")
        _, version, model_id, quality, metric, h, w, count = _HEADER.unpack_from(buf)
        pos = _HEADER.size
        streams = []
        for i in range(count):
            if pos + 4 > len(buf):
                raise CorruptStreamError(f"stream {i} length field is truncated")
            (length,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + length > len(buf):
                raise CorruptStreamError(f"stream {i} payload is truncated ({len(buf) - pos} of {length} bytes)")
            streams.append(buf[pos : pos + length])
            pos += length
        return cls(model_id, quality, metric, h, w, streams, version)
