"""``nzc``: train, code and benchmark from the command line.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors. With
``--json`` stdout carries only the JSON document; logs always go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (
    aggregate,
    build_metadata,
    emit_report,
    eval_codec,
    eval_model,
    find_close,
    get_adapter,
    parse_json,
    render_json,
)
from .benchmark.report import FORMATS
from .benchmark.search import SEARCH_METRICS
from .checkpoint import Checkpoint, load_model
from .container import BitstreamContainer, METRIC_IDS, MODEL_IDS
from .errors import NZError
from .imageio import list_images, read_image, write_image
from .losses import lambda_for_quality
from .metrics import bpp
from .models import build_model
from .synthetic import synthetic_images
from .training import extract_random_patches, load_training_config, train

log = logging.getLogger("nzcodec")

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit status 1."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None

    return parse


def _formats(text):
    items = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in items if v not in FORMATS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"formats must be drawn from {','.join(FORMATS)}")
    return items


def _add_model_flags(p):
    p.add_argument("--checkpoint", type=Path, help="trained .nzck checkpoint (default: untrained seeded model)")
    p.add_argument("--model", choices=sorted(MODEL_IDS), default="factorized")
    p.add_argument("--quality", type=int, choices=range(1, 9), default=1, metavar="1..8")
    p.add_argument("--metric", choices=sorted(METRIC_IDS), help="training metric (default: mse)")
    p.add_argument("--N", type=int, help="override the transform channel count")
    p.add_argument("--M", type=int, help="override the latent channel count")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print machine-readable JSON to stdout")
    common.add_argument("--seed", type=int, default=None, help="fix all randomness (and drop wall-clock fields)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")

    parser = Parser(prog="nzc", description="Learned image compression toolkit.")
    parser.add_argument("--version", action="version", version=f"nzc {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="train a model with the rate-distortion loss")
    p.add_argument("--out", type=Path, required=True, help="directory for checkpoints and the training log")
    p.add_argument("--config", type=Path, help="flat key=value training config file")
    p.add_argument("--data", type=Path, help="directory of PNG/PPM training images")
    p.add_argument("--synthetic", type=int, metavar="N", help="train on N synthetic patches instead of --data")
    p.add_argument("--patches", type=int, default=500, help="number of training patches drawn from --data")
    p.add_argument("--eval-patches", type=int, default=32)
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")
    _add_model_flags(p)
    for flag, kind in (
        ("--lmbda", float),
        ("--steps", int),
        ("--batch-size", int),
        ("--patch-size", int),
        ("--lr", float),
        ("--eval-interval", int),
    ):
        p.add_argument(flag, type=kind)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", parents=[common], help="encode an image into an .nzb container")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="decode an .nzb container to an image")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval-model", parents=[common], help="evaluate a learned model on an image directory")
    p.add_argument("--dir", type=Path, required=True)
    _add_model_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=cmd_eval_model)

    p = sub.add_parser("eval-codec", parents=[common], help="evaluate an external codec on an image directory")
    p.add_argument("--adapter", required=True, help="adapter name from the adapter config")
    p.add_argument("--adapters-config", type=Path, help="adapter INI file (default: packaged templates)")
    p.add_argument("--qualities", type=_csv_list(float), required=True, help="comma-separated quality values")
    p.add_argument("--dir", type=Path, required=True)
    _add_report_flags(p)
    p.set_defaults(func=cmd_eval_codec)

    p = sub.add_parser("find-close", parents=[common], help="bisect a codec's quality toward a target metric")
    p.add_argument("codec", help="adapter name")
    p.add_argument("image", type=Path)
    p.add_argument("target", type=float)
    p.add_argument("--metric", choices=SEARCH_METRICS, default="bpp")
    p.add_argument("--adapters-config", type=Path)
    p.set_defaults(func=cmd_find_close)

    p = sub.add_parser("report", parents=[common], help="merge nz-report/1 JSON files and re-emit them")
    p.add_argument("reports", type=Path, nargs="+")
    p.add_argument("-o", "--output", type=Path, required=True, help="output path prefix")
    p.add_argument("--format", type=_formats, default=list(FORMATS), help="comma-separated subset of json,csv,svg")
    p.add_argument("--name", help="dataset name for the merged report")
    p.set_defaults(func=cmd_report)
    return parser


def _add_report_flags(p):
    p.add_argument("-o", "--output", type=Path, help="write report files with this path prefix")
    p.add_argument("--format", type=_formats, default=list(FORMATS), help="comma-separated subset of json,csv,svg")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")


# -- helpers -------------------------------------------------------------


def _emit(args, payload: dict, human: str):
    if args.json:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(human + "\n")


def _model_from_args(args):
    if getattr(args, "checkpoint", None) is not None:
        return load_model(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    log.warning("no --checkpoint given: using an untrained model (seed %d)", seed)
    return build_model(args.model, args.quality, args.metric or "mse", N=args.N, M=args.M, seed=seed).eval().update()


def _finish_report(args, result, dataset):
    report = aggregate(result.points, dataset=str(dataset), metadata=build_metadata(args.seed is not None), skipped=result.skipped)
    paths = emit_report(report, args.output, args.format) if args.output is not None else []
    if args.json:
        sys.stdout.write(render_json(report))
    else:
        for name, points in report.codecs.items():
            for p in points:
                ssim = "n/a" if p.ms_ssim is None else f"{p.ms_ssim:.5f}"
                sys.stdout.write(f"{name}\tq={p.quality}\tbpp={p.bpp:.4f}\tpsnr={p.psnr:.3f}\tms-ssim={ssim}\n")
    for path in paths:
        log.info("wrote %s", path)
    return 0


# -- subcommands -----------------------------------------------------------


def cmd_train(args):
    seed = args.seed if args.seed is not None else 0
    metric = args.metric or "mse"
    config = load_training_config(
        args.config,
        defaults={"lmbda": lambda_for_quality(metric, args.quality), "metric": metric},
        lmbda=args.lmbda,
        metric=args.metric,
        max_steps=args.steps,
        batch_size=args.batch_size,
        patch_size=args.patch_size,
        initial_lr=args.lr,
        eval_interval=args.eval_interval,
        seed=args.seed,
    )
    size = config.patch_size
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise UsageError("--synthetic needs a positive count")
        train_set = synthetic_images(args.synthetic, size, size, seed=seed)
        eval_set = synthetic_images(args.eval_patches, size, size, seed=seed + 1)
    elif args.data is not None:
        paths = list_images(args.data)
        train_set = extract_random_patches(paths, size, args.patches, seed=seed)
        eval_set = extract_random_patches(paths, size, args.eval_patches, seed=seed + 1)
    else:
        raise UsageError("train needs --data DIR or --synthetic N")
    if args.resume is not None:
        ckpt = Checkpoint.load(args.resume)
        model = ckpt.build_model()
    else:
        ckpt = None
        model = build_model(args.model, args.quality, config.metric, N=args.N, M=args.M, seed=seed)
    args.out.mkdir(parents=True, exist_ok=True)
    result = train(model, config, train_set, eval_set, out_dir=args.out, log_path=args.out / "train.jsonl", resume=ckpt)
    first, last = result.history[0], result.history[-1]
    payload = {
        "steps": result.checkpoint.step,
        "initial": first,
        "final": last,
        "checkpoints": [str(p) for p in result.saved],
    }
    _emit(args, payload, f"trained {result.checkpoint.step} steps: RD loss {first['total']:.4f} -> {last['total']:.4f}; "
          f"checkpoint {result.saved[-1]}")
    return 0


def cmd_compress(args):
    model = _model_from_args(args)
    img = read_image(args.input)
    container = model.compress(img)
    blob = container.to_bytes()
    args.output.write_bytes(blob)
    h, w = img.shape[1:]
    payload = {"input": str(args.input), "output": str(args.output), "bytes": len(blob), "bpp": bpp(8 * len(blob), h, w),
               "height": h, "width": w}
    _emit(args, payload, f"{args.output}: {len(blob)} bytes, {payload['bpp']:.4f} bpp")
    return 0


def cmd_decompress(args):
    container = BitstreamContainer.from_bytes(args.input.read_bytes())
    if args.checkpoint is not None:
        model = load_model(args.checkpoint)
    else:
        names = {v: k for k, v in MODEL_IDS.items()}
        metrics = {v: k for k, v in METRIC_IDS.items()}
        seed = args.seed if args.seed is not None else 0
        log.warning("no --checkpoint given: decoding with an untrained model (seed %d)", seed)
        model = build_model(
            names[container.model_id], container.quality, metrics[container.metric], N=args.N, M=args.M, seed=seed
        ).eval().update()
    rec = model.decompress(container)
    write_image(args.output, rec[0])
    payload = {"input": str(args.input), "output": str(args.output), "height": container.orig_h, "width": container.orig_w}
    _emit(args, payload, f"{args.output}: {container.orig_w}x{container.orig_h}")
    return 0


def cmd_eval_model(args):
    model = _model_from_args(args)
    result = eval_model(model, args.dir, jobs=args.jobs, timings=args.seed is None)
    return _finish_report(args, result, args.dir)


def cmd_eval_codec(args):
    adapter = get_adapter(args.adapter, args.adapters_config)
    qualities = [int(q) if adapter.integer else q for q in args.qualities]
    result = eval_codec(adapter, args.dir, qualities, jobs=args.jobs, timings=args.seed is None)
    return _finish_report(args, result, args.dir)


def cmd_find_close(args):
    adapter = get_adapter(args.codec, args.adapters_config)
    img = read_image(args.image)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = find_close(adapter, img, args.target, args.metric)
    for note in result.warnings:
        log.warning("%s", note)
    payload = {"codec": adapter.name, "image": str(args.image), **result.as_dict()}
    flag = " (target out of range, endpoint returned)" if result.out_of_range else ""
    _emit(args, payload, f"quality {result.quality}: {args.metric} = {result.value:.6g}{flag}")
    return 0


def cmd_report(args):
    points, skipped, names = [], [], []
    for path in args.reports:
        report = parse_json(path.read_text(encoding="utf-8"))
        names.append(report.dataset)
        skipped.extend(report.skipped)
        for per_image in report.per_image.values():
            points.extend(per_image)
    dataset = args.name or ",".join(sorted(set(names)))
    merged = aggregate(points, dataset=dataset, metadata=build_metadata(args.seed is not None), skipped=skipped)
    paths = emit_report(merged, args.output, args.format)
    _emit(args, {"written": [str(p) for p in paths]}, "\n".join(str(p) for p in paths))
    return 0


# -- entry point -----------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"nzc {args.command}: error: {exc}\n")
        return USAGE_EXIT
    except (NZError, OSError) as exc:
        sys.stderr.write(f"nzc {args.command}: {type(exc).__name__}: {exc}\n")
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
