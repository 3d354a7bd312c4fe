"""Static-table range coder over :class:`QuantizedCdfTable` rows.

Byte-stream layout
------------------
State is ``low`` (kept below 2**32, carries propagate into bytes already
written) and ``range`` (32-bit), initialized to ``low = 0`` and
``range = 0xFFFFFFFF``. Coding symbol slot ``s`` of a row with cdf ``C`` at
precision ``P``::

    r = range >> P
    low += r * C[s]
    range = r * (C[s + 1] - C[s])

After each symbol, while ``range < 2**24`` the top byte of ``low`` is
emitted, ``low = (low << 8) mod 2**32`` and ``range <<= 8``. Out-of-support
symbols code the row's last (escape) slot and are followed by a 32-bit raw
word ``sign << 31 | magnitude`` sent as two 16-bit bypass chunks, high
chunk first (a bypass chunk ``v`` codes like a slot with ``C[s] = v`` and
frequency 1 at precision 16). The flush writes the four bytes of ``low``
big-endian. An empty symbol sequence produces an empty payload.

The decoder reads four bytes into ``code`` and then one byte per
renormalization shift, so it consumes exactly the bytes the encoder wrote;
anything after them is ignored.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError, DimensionError, InputError

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_RAW_LIMIT = 1 << 31


@dataclass(frozen=True)
class EncodedChunk:
    data: bytes
    symbol_count: int

    def __len__(self):
        return len(self.data)


class _Encoder:
    __slots__ = ("low", "range", "out")

    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.out = bytearray()

    def put(self, start: int, freq: int, precision: int):
        r = self.range >> precision
        self.low += r * start
        self.range = r * freq
        if self.low > _MASK32:
            self.low &= _MASK32
            out = self.out
            i = len(out) - 1
            while out[i] == 0xFF:
                out[i] = 0
                i -= 1
            out[i] += 1
        while self.range < _TOP:
            self.out.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK32
            self.range <<= 8

    def flush(self) -> bytes:
        self.out += self.low.to_bytes(4, "big")
        return bytes(self.out)


class _Decoder:
    __slots__ = ("code", "range", "buf", "pos")

    def __init__(self, buf: bytes):
        if len(buf) < 4:
            raise CorruptStreamError("range-coded payload shorter than its 4-byte flush")
        self.buf = buf
        self.code = int.from_bytes(buf[:4], "big")
        self.pos = 4
        self.range = _MASK32

    def target(self, precision: int):
        r = self.range >> precision
        value = self.code // r
        if value >> precision:
            raise CorruptStreamError("decoded count outside the table range")
        return r, value

    def consume(self, r: int, start: int, freq: int):
        self.code -= r * start
        self.range = r * freq
        while self.range < _TOP:
            if self.pos >= len(self.buf):
                raise CorruptStreamError("range-coded payload is truncated")
            self.code = (self.code << 8) | self.buf[self.pos]
            self.pos += 1
            self.range <<= 8


def _as_int_list(a, name):
    arr = np.asarray(a)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise InputError(f"{name} must be integers")
    return arr.astype(np.int64).tolist()


def encode(symbols, row_indexes, table) -> EncodedChunk:
    """Range-code ``symbols[i]`` with row ``row_indexes[i]`` of ``table``."""
    syms = _as_int_list(symbols, "symbols")
    rows = _as_int_list(row_indexes, "row_indexes")
    if len(syms) != len(rows):
        raise DimensionError(f"encode: {len(syms)} symbols but {len(rows)} row indexes")
    if not syms:
        return EncodedChunk(b"", 0)
    n_rows = len(table.cdfs)
    cdfs = [c.tolist() for c in table.cdfs]
    offsets = [int(o) for o in table.offsets]
    precision = table.precision
    enc = _Encoder()
    put = enc.put
    for s, r in zip(syms, rows):
        if not 0 <= r < n_rows:
            raise IndexError(f"row index {r} outside table of {n_rows} rows")
        cdf = cdfs[r]
        slot = s - offsets[r]
        escape = len(cdf) - 2
        if 0 <= slot < escape:
            put(cdf[slot], cdf[slot + 1] - cdf[slot], precision)
            continue
        put(cdf[escape], cdf[escape + 1] - cdf[escape], precision)
        magnitude = -s if s < 0 else s
        if magnitude >= _RAW_LIMIT:
            raise InputError(f"symbol {s} exceeds the 31-bit escape magnitude")
        raw = (_RAW_LIMIT if s < 0 else 0) | magnitude
        put(raw >> 16, 1, 16)
        put(raw & 0xFFFF, 1, 16)
    return EncodedChunk(enc.flush(), len(syms))


def decode(chunk: EncodedChunk, row_indexes, table) -> np.ndarray:
    """Exact inverse of :func:`encode` for the same rows and table."""
    rows = _as_int_list(row_indexes, "row_indexes")
    if len(rows) != chunk.symbol_count:
        raise DimensionError(f"decode: {len(rows)} row indexes for {chunk.symbol_count} symbols")
    if chunk.symbol_count == 0:
        return np.zeros(0, dtype=np.int64)
    n_rows = len(table.cdfs)
    cdfs = [c.tolist() for c in table.cdfs]
    offsets = [int(o) for o in table.offsets]
    precision = table.precision
    dec = _Decoder(chunk.data)
    out = [0] * len(rows)
    for i, r in enumerate(rows):
        if not 0 <= r < n_rows:
            raise IndexError(f"row index {r} outside table of {n_rows} rows")
        cdf = cdfs[r]
        rr, value = dec.target(precision)
        slot = bisect_right(cdf, value) - 1
        dec.consume(rr, cdf[slot], cdf[slot + 1] - cdf[slot])
        if slot < len(cdf) - 2:
            out[i] = slot + offsets[r]
            continue
        raw = 0
        for _ in range(2):
            rr, value = dec.target(16)
            dec.consume(rr, value, 1)
            raw = (raw << 16) | value
        magnitude = raw & (_RAW_LIMIT - 1)
        out[i] = -magnitude if raw & _RAW_LIMIT else magnitude
    return np.asarray(out, dtype=np.int64)
