"""Command-line entry point: ``plate-pipeline <subcommand> [flags] PATH...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .blur_gate import BlurGateConfig, calibrate_variances, check, laplacian_variance
from .dataset import AUGMENT_TAGS, augment, synth_blur_corpus
from .deblur import deblur
from .detect import detect
from .errors import ConfigError, ImageDecodeError, PlatePipelineError
from .evaluation import IMAGE_SUFFIXES, bench, evaluate_pipeline, load_ground_truth
from .imaging import load_image, save_image
from .pipeline import PipelineConfig, build_backends, build_deblurrer, run_batch

log = logging.getLogger("plate_pipeline")

COMMANDS = ("check-blur", "deblur", "detect", "run", "augment", "synth-blur", "calibrate",
            "eval", "bench")


class UsageError(Exception):
    def __init__(self, message, usage=""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


@dataclass
class Command:
    name: str
    args: argparse.Namespace
    config: PipelineConfig


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0 or v != v or v == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return v


def _unit_interval(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _non_negative_int(text):
    v = int(text) if text.lstrip("-").isdigit() else None
    if v is None or v < 0:
        raise argparse.ArgumentTypeError(f"must be an integer >= 0, got {text}")
    return v


def _kernel_list(text):
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not sizes:
        raise argparse.ArgumentTypeError("no kernel sizes given")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plate-pipeline",
                     description="Selective-deblur license plate reading pipeline.")
    parser.add_argument("--version", action="version", version=f"plate-pipeline {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    config = _Parser(add_help=False)
    config.add_argument("--config", metavar="PATH", help="JSON pipeline config")
    config.add_argument("--blur-threshold", type=_positive_float, metavar="V",
                        help="Laplacian-variance threshold; at or below means blurred")

    pipe = _Parser(add_help=False)
    pipe.add_argument("--iou", type=_unit_interval, metavar="T", help="NMS IoU threshold (both detectors)")
    pipe.add_argument("--conf", type=_unit_interval, metavar="T",
                      help="confidence threshold (both detectors)")
    mode = pipe.add_mutually_exclusive_group()
    mode.add_argument("--force-deblur", action="store_true", help="deblur every frame")
    mode.add_argument("--skip-deblur", action="store_true", help="never deblur")
    pipe.add_argument("--jobs", type=_positive_int, default=1, metavar="N", help="frames in parallel")
    pipe.add_argument("--seed", type=int, default=0)

    images = _Parser(add_help=False)
    images.add_argument("images", nargs="+", metavar="IMAGE", help="image files or directories")

    p = sub.add_parser("check-blur", parents=[config, images], help="print the blur verdict")
    p = sub.add_parser("deblur", parents=[config, images], help="run the deblurrer and save images")
    p.add_argument("--out", required=True, metavar="DIR")
    p = sub.add_parser("detect", parents=[config, pipe, images], help="plate detection only")
    p = sub.add_parser("run", parents=[config, pipe, images], help="full pipeline, JSON lines")
    p.add_argument("--out", metavar="FILE", help="write JSON lines here instead of stdout")
    p.add_argument("--timings", action="store_true", help="include stage_times in the output")
    p = sub.add_parser("augment", parents=[images], help="write the five weather variants")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")
    p = sub.add_parser("synth-blur", parents=[images], help="write a paired blurred corpus")
    p.add_argument("--kernel-sizes", type=_kernel_list, default=[7, 9, 11, 13, 15, 17, 19], metavar="K,K,...")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")
    p = sub.add_parser("calibrate", help="recommend a blur threshold")
    p.add_argument("--sharp", nargs="+", required=True, metavar="PATH")
    p.add_argument("--blurred", nargs="+", required=True, metavar="PATH")
    p = sub.add_parser("eval", parents=[config, pipe], help="precision/recall/plate accuracy")
    p.add_argument("dataset", metavar="DIR", help="images with sibling .txt annotations")
    p.add_argument("--texts", metavar="FILE", help="JSON map image name -> plate texts")
    p.add_argument("--eval-iou", type=_unit_interval, default=0.5, metavar="T")
    p.add_argument("--out", metavar="FILE")
    p = sub.add_parser("bench", parents=[config, pipe, images], help="per-stage latency")
    p.add_argument("--warmup", type=_non_negative_int, default=1)
    p.add_argument("--repeats", type=_positive_int, default=3)
    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "blur_threshold", None) is not None:
        cfg = replace(cfg, gate=BlurGateConfig(args.blur_threshold))
    for stage in ("lpd", "cr"):
        sc = getattr(cfg, stage)
        det = sc.detection
        if getattr(args, "iou", None) is not None:
            det = replace(det, iou_threshold=args.iou)
        if getattr(args, "conf", None) is not None:
            det = replace(det, confidence_threshold=args.conf)
        cfg = replace(cfg, **{stage: replace(sc, detection=det)})
    if getattr(args, "force_deblur", False):
        cfg = replace(cfg, deblur_mode="force")
    if getattr(args, "skip_deblur", False):
        cfg = replace(cfg, deblur_mode="skip")
    return cfg


def parse_args(argv: Optional[Sequence[str]] = None) -> Command:
    parser = build_parser()
    args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    if args.command is None:
        raise UsageError("a subcommand is required", parser.format_help())
    config_path = getattr(args, "config", None)
    cfg = PipelineConfig.load(config_path) if config_path else PipelineConfig()
    return Command(args.command, args, _apply_overrides(cfg, args))


def _expand(paths: Sequence[str]) -> List[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        else:
            out.append(p)
    return out


def _emit(obj, stream) -> None:
    stream.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_all(paths):
    """Decode each path; undecodable files are logged and reported as failures."""
    loaded, failed = [], 0
    for p in paths:
        try:
            loaded.append((p, load_image(p)))
        except ImageDecodeError as exc:
            log.error("%s", exc)
            failed += 1
    return loaded, failed


def _cmd_check_blur(cmd, out):
    loaded, failed = _load_all(_expand(cmd.args.images))
    for path, img in loaded:
        _emit({"image": str(path), **check(img, cmd.config.gate).to_dict()}, out)
    return 1 if failed else 0


def _cmd_deblur(cmd, out):
    backend = build_deblurrer(cmd.config.deblur)
    if backend is None:
        raise ConfigError("no deblur backend configured")
    dst = Path(cmd.args.out)
    dst.mkdir(parents=True, exist_ok=True)
    loaded, failed = _load_all(_expand(cmd.args.images))
    for path, img in loaded:
        target = dst / f"{path.stem}_deblurred.png"
        save_image(deblur(backend, img).sharp, target)
        _emit({"image": str(path), "out": str(target)}, out)
    return 1 if failed else 0


def _cmd_detect(cmd, out):
    backends = build_backends(cmd.config)
    loaded, failed = _load_all(_expand(cmd.args.images))
    for path, img in loaded:
        dets = detect(backends.lpd, img, cmd.config.lpd.detection, stage="lpd")
        _emit({"image": str(path), "detections": [d.to_dict() for d in dets]}, out)
    return 1 if failed else 0


def _cmd_run(cmd, out):
    backends = build_backends(cmd.config)
    loaded, failed = _load_all(_expand(cmd.args.images))
    results = run_batch([img for _, img in loaded], cmd.config, backends, jobs=cmd.args.jobs)
    stream = open(cmd.args.out, "w", encoding="utf-8") if cmd.args.out else out
    try:
        for (path, _), res in zip(loaded, results):
            if not cmd.args.timings:
                log.info("%s stage_times %s", path, json.dumps(res.stage_times, sort_keys=True))
            _emit({"image": str(path), **res.to_dict(timings=cmd.args.timings)}, stream)
    finally:
        if stream is not out:
            stream.close()
    return 1 if failed else 0


def _cmd_augment(cmd, out):
    dst = Path(cmd.args.out)
    dst.mkdir(parents=True, exist_ok=True)
    loaded, failed = _load_all(_expand(cmd.args.images))
    for path, img in loaded:
        variants = augment(img, cmd.args.seed)
        written = {}
        for tag in AUGMENT_TAGS:
            target = dst / f"{path.stem}_{tag}.png"
            save_image(variants[tag], target)
            written[tag] = str(target)
        _emit({"image": str(path), "seed": cmd.args.seed, "variants": written}, out)
    return 1 if failed else 0


def _cmd_synth_blur(cmd, out):
    manifest = synth_blur_corpus(_expand(cmd.args.images), cmd.args.kernel_sizes, cmd.args.out,
                                 seed=cmd.args.seed)
    _emit(manifest.to_dict(), out)
    return 0


def _cmd_calibrate(cmd, out):
    sharp, f1 = _load_all(_expand(cmd.args.sharp))
    blurred, f2 = _load_all(_expand(cmd.args.blurred))
    cal = calibrate_variances([laplacian_variance(i) for _, i in sharp],
                              [laplacian_variance(i) for _, i in blurred])
    _emit({"threshold": cal.threshold, "separable": cal.separable, "errors": cal.errors}, out)
    return 1 if f1 or f2 else 0


def _cmd_eval(cmd, out):
    backends = build_backends(cmd.config)
    samples = load_ground_truth(cmd.args.dataset, cmd.args.texts)
    report = evaluate_pipeline(samples, cmd.config, backends, iou_threshold=cmd.args.eval_iou,
                               jobs=cmd.args.jobs)
    doc = {**report.to_dict(), "config": cmd.config.to_dict(), "eval_iou": cmd.args.eval_iou,
           "version": f"v{__version__}"}
    if cmd.args.out:
        Path(cmd.args.out).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _emit(doc, out)
    return 0


def _cmd_bench(cmd, out):
    backends = build_backends(cmd.config)
    loaded, failed = _load_all(_expand(cmd.args.images))
    table = bench([img for _, img in loaded], cmd.config, backends, warmup=cmd.args.warmup,
                  repeats=cmd.args.repeats, jobs=cmd.args.jobs)
    _emit({**table, "version": f"v{__version__}"}, out)
    return 1 if failed else 0


HANDLERS = {
    "check-blur": _cmd_check_blur, "deblur": _cmd_deblur, "detect": _cmd_detect, "run": _cmd_run,
    "augment": _cmd_augment, "synth-blur": _cmd_synth_blur, "calibrate": _cmd_calibrate,
    "eval": _cmd_eval, "bench": _cmd_bench,
}


def execute(cmd: Command, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        return HANDLERS[cmd.name](cmd, out)
    except (PlatePipelineError, OSError) as exc:
        log.error("%s: %s", cmd.name, exc)
        return 1


def _setup_logging():
    level = os.environ.get("PLATE_PIPELINE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    _setup_logging()
    try:
        cmd = parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc.usage}plate-pipeline: error: {exc}\n")
        return 2
    except ConfigError as exc:
        sys.stderr.write(f"plate-pipeline: error: {exc}\n")
        return 2
    return execute(cmd, out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
