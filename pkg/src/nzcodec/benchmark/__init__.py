"""Dataset evaluation of learned models and external codecs, with RD reports."""
from .adapters import CodecAdapter, get_adapter, load_adapters, parse_adapters, rgb_to_yuv444, yuv444_to_rgb
from .evaluate import EvalResult, RdPoint, eval_codec, eval_model, quality_metrics
from .report import (
    REPORT_SCHEMA,
    SCHEMA_ID,
    DatasetReport,
    aggregate,
    build_metadata,
    emit_report,
    parse_json,
    render_csv,
    render_json,
    render_svg,
    validate_report,
)
from .search import NonMonotonicWarning, SearchResult, bisect_grid, find_close, probe_budget

__all__ = [
    "CodecAdapter",
    "DatasetReport",
    "EvalResult",
    "NonMonotonicWarning",
    "REPORT_SCHEMA",
    "RdPoint",
    "SCHEMA_ID",
    "SearchResult",
    "aggregate",
    "bisect_grid",
    "build_metadata",
    "emit_report",
    "eval_codec",
    "eval_model",
    "find_close",
    "get_adapter",
    "load_adapters",
    "parse_adapters",
    "parse_json",
    "probe_budget",
    "quality_metrics",
    "render_csv",
    "render_json",
    "render_svg",
    "rgb_to_yuv444",
    "validate_report",
    "yuv444_to_rgb",
]
