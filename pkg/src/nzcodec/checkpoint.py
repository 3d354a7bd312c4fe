"""Single-file training checkpoints (``.nzck``).

Layout: ``b"NZCK"``, version u8, header length u32 (little-endian), a UTF-8
JSON header with sorted keys, then raw little-endian blobs. The header lists
each blob as ``{"key", "dtype", "shape", "offset", "nbytes"}``; offsets are
relative to the end of the header. Parameter blobs are keyed
``param/<name>``, optimizer moments ``adam/<group>/<name>/m|v``, CDF tables
``table/<module>`` (serialized with :meth:`QuantizedCdfTable.to_bytes`).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .entropy_models import EntropyBottleneck, GaussianConditional, QuantizedCdfTable
from .errors import FormatError
from .models import ArchitectureConfig, build_model

MAGIC = b"NZCK"
VERSION = 1


@dataclass
class Checkpoint:
    arch: dict
    params: dict
    step: int = 0
    training: dict = field(default_factory=dict)
    optimizers: dict = field(default_factory=dict)
    scheduler: dict = field(default_factory=dict)
    rng_state: dict | None = None
    best: float | None = None
    tables: dict = field(default_factory=dict)
    seed: int = 0

    # -- construction ---------------------------------------------------
    @classmethod
    def from_model(cls, model, **extra) -> "Checkpoint":
        tables = {}
        for name, module in _entropy_modules(model):
            if module.table is not None:
                tables[name] = module.table.to_bytes()
        return cls(arch=model.config.to_dict(), params=model.state_dict(), tables=tables, seed=model.seed, **extra)

    def build_model(self):
        """Instantiate the model, load parameters and any stored CDF tables."""
        model = build_model(**self.arch, seed=self.seed)
        model.load_state_dict(self.params)
        stored = dict(self.tables)
        for name, module in _entropy_modules(model):
            if name in stored:
                module.table, _ = QuantizedCdfTable.from_bytes(stored[name])
        return model

    # -- serialization --------------------------------------------------
    def to_bytes(self) -> bytes:
        blobs, entries = [], []
        offset = 0

        def add(key, arr):
            nonlocal offset
            arr = np.ascontiguousarray(arr)
            dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
            raw = arr.astype(dtype, copy=False).tobytes()
            entries.append({"key": key, "dtype": dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)

        for name in sorted(self.params):
            add(f"param/{name}", self.params[name])
        optim_meta = {}
        for group in sorted(self.optimizers):
            state = self.optimizers[group]
            meta = {"lr": state["lr"], "steps": {}}
            for name in sorted(k for k in state if k != "lr"):
                add(f"adam/{group}/{name}/m", state[name]["m"])
                add(f"adam/{group}/{name}/v", state[name]["v"])
                meta["steps"][name] = int(state[name]["step"])
            optim_meta[group] = meta
        for name in sorted(self.tables):
            add(f"table/{name}", np.frombuffer(self.tables[name], dtype=np.uint8))
        header = {
            "arch": self.arch,
            "step": self.step,
            "seed": self.seed,
            "training": self.training,
            "optimizers": optim_meta,
            "scheduler": self.scheduler,
            "rng_state": _jsonable(self.rng_state),
            "best": self.best,
            "blobs": entries,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<BI", VERSION, len(head)) + head + b"".join(blobs)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise FormatError("not an nzcodec checkpoint (bad magic)")
        if len(buf) < 9:
            raise FormatError("checkpoint header is truncated")
        version, head_len = struct.unpack_from("<BI", buf, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        start = 9 + head_len
        try:
            header = json.loads(buf[9:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt checkpoint header: {exc}") from None
        arrays = {}
        for e in header["blobs"]:
            lo = start + e["offset"]
            hi = lo + e["nbytes"]
            if hi > len(buf):
                raise FormatError(f"checkpoint blob {e['key']} is truncated")
            arrays[e["key"]] = np.frombuffer(buf[lo:hi], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        params = {k[len("param/") :]: v for k, v in arrays.items() if k.startswith("param/")}
        tables = {k[len("table/") :]: v.tobytes() for k, v in arrays.items() if k.startswith("table/")}
        optimizers = {}
        for group, meta in header["optimizers"].items():
            state = {"lr": meta["lr"]}
            for name, step in meta["steps"].items():
                state[name] = {
                    "m": arrays[f"adam/{group}/{name}/m"],
                    "v": arrays[f"adam/{group}/{name}/v"],
                    "step": step,
                }
            optimizers[group] = state
        return cls(
            arch=header["arch"],
            params=params,
            step=header["step"],
            training=header["training"],
            optimizers=optimizers,
            scheduler=header["scheduler"],
            rng_state=header["rng_state"],
            best=header["best"],
            tables=tables,
            seed=header.get("seed", 0),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _entropy_modules(model):
    for attr in ("bottleneck", "conditional"):
        module = getattr(model, attr, None)
        if isinstance(module, (EntropyBottleneck, GaussianConditional)):
            yield attr, module


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def load_model(path):
    """Model from a checkpoint file, in eval mode with CDF tables ready."""
    model = Checkpoint.load(path).build_model().eval()
    if not model.tables_ready:
        model.update()
    return model


__all__ = ["ArchitectureConfig", "Checkpoint", "load_model"]
