"""Dataset-level RD aggregation and JSON / CSV / SVG report output."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from xml.sax.saxutils import escape

import jsonschema

from .. import __version__
from ..errors import InputError
from .evaluate import RdPoint

SCHEMA_ID = "nz-report/1"
FORMATS = ("json", "csv", "svg")
SVG_WIDTH, SVG_HEIGHT = 960, 720
CHART_METRICS = (("psnr", "PSNR [dB]"), ("ms_ssim", "MS-SSIM"))
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
CSV_FIELDS = ("codec", "quality", "bpp", "psnr", "ms_ssim", "est_bpp", "enc_seconds", "dec_seconds", "n_images")

_number = {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf", "nan"]}]}
_optional = {"anyOf": [_number, {"type": "null"}]}
_point = {
    "type": "object",
    "required": ["quality", "bpp", "psnr", "ms_ssim"],
    "properties": {
        "quality": {"type": "number"},
        "bpp": _number,
        "psnr": _number,
        "ms_ssim": _optional,
        "est_bpp": _optional,
        "enc_seconds": _optional,
        "dec_seconds": _optional,
        "n_images": {"type": "integer", "minimum": 1},
        "image": {"type": "string"},
    },
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": SCHEMA_ID,
    "type": "object",
    "required": ["schema", "dataset", "metadata", "codecs"],
    "properties": {
        "schema": {"const": SCHEMA_ID},
        "dataset": {"type": "string"},
        "metadata": {"type": "object"},
        "skipped": {"type": "array", "items": {"type": "object"}},
        "codecs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "points", "images"],
                "properties": {
                    "name": {"type": "string"},
                    "points": {"type": "array", "minItems": 1, "items": _point},
                    "images": {"type": "array", "items": _point},
                },
            },
        },
    },
}


@dataclass
class DatasetReport:
    dataset: str
    codecs: dict  # name -> list of mean RdPoint, sorted by bpp
    per_image: dict  # name -> list of per-image RdPoint
    metadata: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    n_images: dict = field(default_factory=dict)  # (name, quality) -> count


def build_metadata(deterministic: bool = False) -> dict:
    """Provenance block. Under ``deterministic`` the date only comes from SOURCE_DATE_EPOCH."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        date = datetime.fromtimestamp(int(epoch), timezone.utc).isoformat()
    elif deterministic:
        date = None
    else:
        date = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    return {
        "tool": "nzcodec",
        "version": __version__,
        "date": date,
        "platform": platform.platform(),
        "python": platform.python_version(),
        "aggregation": "arithmetic mean of per-image bpp, PSNR and MS-SSIM",
        "psnr": "peak 1.0 on 8-bit rounded RGB, joint over channels",
        "color_conversion": "yuv444-8 adapters: BT.601 full-range RGB<->YCbCr on 8-bit values",
        "runtime_note": "timings are informative only and not comparable across codec families",
    }


def _mean(values):
    values = list(values)
    if any(v is None for v in values):
        return None
    if any(math.isinf(v) for v in values):
        return math.inf if all(v > 0 for v in values if math.isinf(v)) else math.nan
    # fsum is exactly rounded, so the mean does not depend on input order
    return math.fsum(values) / len(values)


def aggregate(points, dataset: str = "", metadata=None, skipped=()) -> DatasetReport:
    """Mean of per-image values per (codec, quality); curves sorted by bpp."""
    groups = defaultdict(list)
    for p in points:
        groups[(p.codec, p.quality)].append(p)
    if not groups:
        raise InputError("aggregate needs at least one point")
    codecs, per_image, counts = defaultdict(list), defaultdict(list), {}
    for (name, quality), group in groups.items():
        mean = RdPoint(
            codec=name,
            quality=quality,
            bpp=_mean(p.bpp for p in group),
            psnr=_mean(p.psnr for p in group),
            ms_ssim=_mean(p.ms_ssim for p in group),
            enc_seconds=_mean(p.enc_seconds for p in group),
            dec_seconds=_mean(p.dec_seconds for p in group),
            est_bpp=_mean(p.est_bpp for p in group),
        )
        codecs[name].append(mean)
        per_image[name].extend(group)
        counts[(name, quality)] = len(group)
    for name in codecs:
        codecs[name].sort(key=lambda p: (p.bpp, p.quality))
        per_image[name].sort(key=lambda p: (p.quality, p.image or ""))
    return DatasetReport(
        dataset=str(dataset),
        codecs={k: codecs[k] for k in sorted(codecs)},
        per_image={k: per_image[k] for k in sorted(per_image)},
        metadata=dict(metadata or {}),
        skipped=sorted(skipped, key=lambda s: s.get("image", "")),
        n_images=counts,
    )


# -- JSON --------------------------------------------------------------


def _enc(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _dec(v):
    return float(v) if isinstance(v, str) else v


_POINT_KEYS = ("quality", "bpp", "psnr", "ms_ssim", "est_bpp", "enc_seconds", "dec_seconds")


def report_to_dict(report: DatasetReport) -> dict:
    codecs = []
    for name, points in report.codecs.items():
        means = [
            {**{k: _enc(getattr(p, k)) for k in _POINT_KEYS}, "n_images": report.n_images.get((name, p.quality), 1)}
            for p in points
        ]
        images = [{"image": p.image or "", **{k: _enc(getattr(p, k)) for k in _POINT_KEYS}} for p in report.per_image.get(name, [])]
        codecs.append({"name": name, "points": means, "images": images})
    return {
        "schema": SCHEMA_ID,
        "dataset": report.dataset,
        "metadata": report.metadata,
        "skipped": report.skipped,
        "codecs": codecs,
    }


def report_from_dict(obj: dict) -> DatasetReport:
    validate_report(obj)
    codecs, per_image, counts = {}, {}, {}
    for entry in obj["codecs"]:
        name = entry["name"]
        codecs[name] = [RdPoint(codec=name, **{k: _dec(pt.get(k)) for k in _POINT_KEYS}) for pt in entry["points"]]
        per_image[name] = [
            RdPoint(codec=name, image=pt["image"], **{k: _dec(pt.get(k)) for k in _POINT_KEYS}) for pt in entry["images"]
        ]
        for pt in entry["points"]:
            counts[(name, pt["quality"])] = pt.get("n_images", 1)
    return DatasetReport(obj["dataset"], codecs, per_image, obj["metadata"], obj.get("skipped", []), counts)


def validate_report(obj: dict):
    """Raise :class:`jsonschema.ValidationError` unless ``obj`` is a valid nz-report/1 document."""
    jsonschema.validate(obj, REPORT_SCHEMA)


def render_json(report: DatasetReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def parse_json(text: str) -> DatasetReport:
    return report_from_dict(json.loads(text))


# -- CSV ---------------------------------------------------------------


def render_csv(report: DatasetReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for name, points in report.codecs.items():
        for p in points:
            row = {k: _enc(getattr(p, k)) for k in _POINT_KEYS}
            writer.writerow({"codec": name, **row, "n_images": report.n_images.get((name, p.quality), 1)})
    return buf.getvalue()


# -- SVG ---------------------------------------------------------------


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def render_svg(report: DatasetReport, metric: str = "psnr", width: int = SVG_WIDTH, height: int = SVG_HEIGHT) -> str:
    """One RD chart: bpp on x, ``metric`` on y, one polyline per codec."""
    label = dict(CHART_METRICS)[metric]
    left, right, top, bottom = 90, 220, 50, 70
    pw, ph = width - left - right, height - top - bottom
    series = {}
    for name, points in report.codecs.items():
        series[name] = [
            (p.bpp, getattr(p, metric))
            for p in points
            if getattr(p, metric) is not None and math.isfinite(getattr(p, metric)) and math.isfinite(p.bpp)
        ]
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in series.values() for _, y in pts] or [0.0, 1.0]
    x0, x1 = 0.0, max(xs) * 1.05 or 1.0
    pad = (max(ys) - min(ys)) * 0.05 or 0.5
    y0, y1 = min(ys) - pad, max(ys) + pad

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="28" text-anchor="middle" font-family="sans-serif" font-size="18">'
        f"{escape(report.dataset or 'dataset')}: {label} vs. bpp</text>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 6}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 22}" text-anchor="middle" font-family="sans-serif" font-size="12">{t:.2f}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 6}" y1="{sy(t):.2f}" x2="{left}" y2="{sy(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 10}" y="{sy(t) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="12">{t:.3f}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 20}" text-anchor="middle" font-family="sans-serif" font-size="14">bit-rate [bpp]</text>')
    out.append(
        f'<text x="24" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="14" '
        f'transform="rotate(-90 24 {top + ph / 2:.1f})">{escape(label)}</text>'
    )
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"><title>{escape(name)}</title></polyline>')
        for x, y in pts:
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        ly = top + 20 + 22 * i
        lx = left + pw + 20
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 38}" y="{ly + 4}" font-family="sans-serif" font-size="13">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- files -------------------------------------------------------------


def emit_report(report: DatasetReport, prefix, formats=FORMATS) -> list:
    """Write ``prefix.json``, ``prefix.csv`` and ``prefix-<metric>.svg`` as requested."""
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise InputError(f"unknown report format(s): {', '.join(sorted(unknown))}")
    if not report.codecs:
        raise InputError("cannot emit an empty report")
    prefix = Path(prefix)
    written = []
    if "json" in formats:
        path = prefix.with_name(prefix.name + ".json")
        path.write_text(render_json(report), encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        path = prefix.with_name(prefix.name + ".csv")
        path.write_text(render_csv(report), encoding="utf-8")
        written.append(path)
    if "svg" in formats:
        for metric, _ in CHART_METRICS:
            path = prefix.with_name(f"{prefix.name}-{metric.replace('_', '-')}.svg")
            path.write_text(render_svg(report, metric), encoding="utf-8")
            written.append(path)
    return written
