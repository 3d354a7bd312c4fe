"""External codec executables driven through command templates.

An adapter is plain data read from an INI file, one section per codec::

    [jpeg]
    encode = cjpeg -quality {q} -outfile {output} {input}
    decode = djpeg -ppm -outfile {output} {input}
    qmin = 1
    qmax = 100
    pixfmt = rgb8

Placeholders are ``{input}``, ``{output}``, ``{q}``, ``{width}`` and
``{height}``. ``qmin > qmax`` declares a codec whose quality *improves* as
the parameter decreases (QP/CRF style); the grid is then walked downwards.

Optional keys: ``qstep`` (grid spacing, default 1), ``integer`` (default
true), ``input_ext`` (``.ppm``; ``.yuv`` for yuv444-8), ``output_ext``
(``.bin``), ``decoded_ext`` (``.ppm``; ``.yuv`` for yuv444-8) and
``timeout`` in seconds (120).

Pixel formats: ``rgb8`` hands the codec an 8-bit RGB file; ``yuv444-8``
hands it raw planar 8-bit Y, Cb, Cr planes converted with the BT.601
full-range matrix below, and converts the decoded planes back the same way.
"""
from __future__ import annotations

import configparser
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import CodecNotFoundError, CodecRunError, CodecTimeoutError, ContractError, InputError
from ..imageio import to_uint8
from .evaluate import RdPoint, quality_metrics

PIXEL_FORMATS = ("rgb8", "yuv444-8")
PLACEHOLDERS = ("input", "output", "q", "width", "height")
DEFAULT_TIMEOUT = 120.0

# BT.601 full range, applied to 8-bit values
RGB_TO_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)

_UNRESOLVED = re.compile(r"\{[A-Za-z_]*\}")


def rgb_to_yuv444(img: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [0, 1] -> (3, H, W) uint8 Y, Cb, Cr planes."""
    rgb = to_uint8(img).astype(np.float64)
    ycc = rgb @ RGB_TO_YCBCR.T + YCBCR_OFFSET
    return np.clip(np.rint(ycc), 0, 255).astype(np.uint8).transpose(2, 0, 1)


def yuv444_to_rgb(planes: np.ndarray) -> np.ndarray:
    """(3, H, W) uint8 Y, Cb, Cr planes -> (3, H, W) float32 RGB in [0, 1]."""
    ycc = planes.astype(np.float64).transpose(1, 2, 0) - YCBCR_OFFSET
    rgb = np.clip(np.rint(ycc @ YCBCR_TO_RGB.T), 0, 255)
    return (rgb.transpose(2, 0, 1) / 255.0).astype(np.float32)


def temp_root():
    """Directory for adapter scratch files (``NZ_TMPDIR`` or the system default)."""
    return os.environ.get("NZ_TMPDIR") or None


@dataclass(frozen=True)
class CodecAdapter:
    name: str
    encode: str
    decode: str
    qmin: float
    qmax: float
    pixfmt: str = "rgb8"
    integer: bool = True
    qstep: float = 1
    input_ext: str = ""
    output_ext: str = ".bin"
    decoded_ext: str = ""
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.pixfmt not in PIXEL_FORMATS:
            raise InputError(f"adapter {self.name}: pixfmt must be one of {PIXEL_FORMATS}, got {self.pixfmt!r}")
        if not self.qstep > 0:
            raise InputError(f"adapter {self.name}: qstep must be positive")
        default_ext = ".yuv" if self.pixfmt == "yuv444-8" else ".ppm"
        if not self.input_ext:
            object.__setattr__(self, "input_ext", default_ext)
        if not self.decoded_ext:
            object.__setattr__(self, "decoded_ext", default_ext)
        for key in ("encode", "decode"):
            for field_name in re.findall(r"\{([^{}]*)\}", getattr(self, key)):
                if field_name not in PLACEHOLDERS:
                    raise InputError(f"adapter {self.name}: unknown placeholder {{{field_name}}} in {key}")

    def quality_grid(self) -> list:
        """Quality values from ``qmin`` to ``qmax`` inclusive, in that direction."""
        step = self.qstep if self.qmax >= self.qmin else -self.qstep
        n = int(np.floor(abs(self.qmax - self.qmin) / self.qstep + 1e-9)) + 1
        grid = [self.qmin + i * step for i in range(n)]
        return [int(round(q)) for q in grid] if self.integer else [round(q, 10) for q in grid]

    def format_quality(self, q) -> str:
        return str(int(round(q))) if self.integer else repr(float(q))

    def command(self, which: str, **values) -> list:
        """Argument vector for ``which`` ("encode" or "decode") with placeholders filled."""
        template = getattr(self, which)
        args = [part.format(**values) for part in shlex.split(template)]
        for arg in args:
            if _UNRESOLVED.search(arg):
                raise ContractError(f"adapter {self.name}: unresolved placeholder in {arg!r}")
        return args

    def check_available(self):
        for which in ("encode", "decode"):
            exe = shlex.split(getattr(self, which))[0]
            if shutil.which(exe) is None:
                raise CodecNotFoundError(
                    f"{self.name}: executable {exe!r} not found on PATH; codec binaries are not bundled, "
                    f"install it or edit the '{which}' command in the adapter config"
                )

    def run(self, image: np.ndarray, quality):
        """Encode and decode one (3, H, W) image.

        Returns ``(compressed_bytes, decoded_image, enc_seconds, dec_seconds)``.
        """
        self.check_available()
        _, h, w = image.shape
        with tempfile.TemporaryDirectory(prefix="nzc-", dir=temp_root()) as tmp:
            tmp = Path(tmp)
            src = tmp / f"input{self.input_ext}"
            enc = tmp / f"stream{self.output_ext}"
            dec = tmp / f"decoded{self.decoded_ext}"
            self._write_input(src, image)
            common = {"q": self.format_quality(quality), "width": w, "height": h}
            enc_s = self._call(self.command("encode", input=src, output=enc, **common))
            if not enc.is_file():
                raise CodecRunError(f"{self.name}: encoder produced no output file", output="")
            nbytes = enc.stat().st_size
            dec_s = self._call(self.command("decode", input=enc, output=dec, **common))
            decoded = self._read_output(dec, h, w)
        return nbytes, decoded, enc_s, dec_s

    def measure(self, image: np.ndarray, quality):
        """:class:`RdPoint` for one image at one quality."""
        nbytes, decoded, enc_s, dec_s = self.run(image, quality)
        p, s = quality_metrics(image, decoded)
        h, w = image.shape[1:]
        return RdPoint(self.name, quality, 8.0 * nbytes / (h * w), p, s, enc_s, dec_s)

    def _write_input(self, path: Path, image: np.ndarray):
        if self.pixfmt == "yuv444-8":
            path.write_bytes(rgb_to_yuv444(image).tobytes())
        else:
            Image.fromarray(to_uint8(image), "RGB").save(path)

    def _read_output(self, path: Path, h: int, w: int) -> np.ndarray:
        if not path.is_file():
            raise CodecRunError(f"{self.name}: decoder produced no output file", output="")
        if self.pixfmt == "yuv444-8":
            raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
            if raw.size < 3 * h * w:
                raise CodecRunError(f"{self.name}: decoded yuv444 file is too short", output="")
            return yuv444_to_rgb(raw[: 3 * h * w].reshape(3, h, w))
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
        if rgb.shape[:2] != (h, w):
            raise CodecRunError(f"{self.name}: decoded size {rgb.shape[1]}x{rgb.shape[0]} != {w}x{h}", output="")
        return rgb.transpose(2, 0, 1) / 255.0

    def _call(self, args) -> float:
        start = time.perf_counter()
        try:
            proc = subprocess.run(args, capture_output=True, timeout=self.timeout, check=False)
        except subprocess.TimeoutExpired as exc:
            raise CodecTimeoutError(
                f"{self.name}: {args[0]} timed out after {self.timeout:g} s", output=_text(exc.stdout, exc.stderr)
            ) from None
        except FileNotFoundError:
            raise CodecNotFoundError(f"{self.name}: executable {args[0]!r} not found") from None
        if proc.returncode != 0:
            output = _text(proc.stdout, proc.stderr)
            raise CodecRunError(f"{self.name}: {args[0]} exited with status {proc.returncode}: {output.strip()[-400:]}", output=output)
        return time.perf_counter() - start


def _text(*streams) -> str:
    return "".join(s.decode("utf-8", "replace") if isinstance(s, bytes) else (s or "") for s in streams)


def _adapter_from_section(name: str, section) -> CodecAdapter:
    missing = [k for k in ("encode", "decode", "qmin", "qmax") if k not in section]
    if missing:
        raise InputError(f"adapter [{name}] is missing key(s): {', '.join(missing)}")
    try:
        integer = section.getboolean("integer", fallback=True)
        number = int if integer else float
        return CodecAdapter(
            name=section.get("name", name),
            encode=section["encode"],
            decode=section["decode"],
            qmin=number(section["qmin"]),
            qmax=number(section["qmax"]),
            pixfmt=section.get("pixfmt", "rgb8"),
            integer=integer,
            qstep=number(section.get("qstep", "1")),
            input_ext=section.get("input_ext", ""),
            output_ext=section.get("output_ext", ".bin"),
            decoded_ext=section.get("decoded_ext", ""),
            timeout=section.getfloat("timeout", fallback=DEFAULT_TIMEOUT),
        )
    except ValueError as exc:
        raise InputError(f"adapter [{name}]: {exc}") from None


def parse_adapters(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"cannot parse adapter config: {exc}") from None
    adapters = {}
    for name in parser.sections():
        adapter = _adapter_from_section(name, parser[name])
        adapters[adapter.name] = adapter
    return adapters


def load_adapters(path=None) -> dict:
    """Adapters from ``path``, or the packaged template file when ``path`` is None."""
    if path is None:
        text = resources.files(__package__).joinpath("adapters.ini").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read adapter config {path}: {exc}") from None
    return parse_adapters(text)


def get_adapter(name: str, path=None) -> CodecAdapter:
    adapters = load_adapters(path)
    if name not in adapters:
        raise InputError(f"no adapter named {name!r}; known: {', '.join(sorted(adapters)) or 'none'}")
    return adapters[name]
