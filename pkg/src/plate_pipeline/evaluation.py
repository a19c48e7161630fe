"""
Scoring pipeline output against ground truth plates, and timing its stages.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import denormalize, read_annotations
from .detect import Detection, iou
from .errors import BackendFailure, ConfigError, EmptySet
from .imaging import BBox, Image, load_image
from .pipeline import STAGES, Backends, PipelineConfig, PipelineResult, run, run_batch

__all__ = [
    "GroundTruthPlate", "EvalSample", "EvalReport", "match_detections", "precision_recall",
    "evaluate_pipeline", "bench", "load_ground_truth", "LatencyStats",
]

EVAL_IOU = 0.5


@dataclass(frozen=True)
class GroundTruthPlate:
    box: BBox
    text: str


@dataclass(frozen=True)
class EvalSample:
    name: str
    image: Image
    plates: Tuple[GroundTruthPlate, ...]


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    plate_accuracy: float
    correct_plates: int
    total_plates: int
    images: int
    deblurred_images: int
    mean_stage_times: Dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {
            "precision": self.precision, "recall": self.recall,
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "plate_accuracy": self.plate_accuracy,
            "correct_plates": self.correct_plates, "total_plates": self.total_plates,
            "images": self.images, "deblurred_images": self.deblurred_images,
            "mean_stage_times": dict(self.mean_stage_times),
        }


def _greedy_match(pred_boxes: Sequence[BBox], confidences: Sequence[float], gts: Sequence[BBox],
                  iou_threshold: float) -> List[Optional[int]]:
    """For each prediction (by input index) the GT index it matched, or ``None``."""
    order = sorted(range(len(pred_boxes)), key=lambda i: (-confidences[i], i))
    taken = [False] * len(gts)
    matched: List[Optional[int]] = [None] * len(pred_boxes)
    for i in order:
        best, best_iou = None, iou_threshold
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou(pred_boxes[i], g)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            matched[i] = best
    return matched


def match_detections(preds: Sequence[Detection], gts: Sequence[BBox],
                     iou_threshold: float = EVAL_IOU) -> Tuple[int, int, int]:
    """Greedy confidence-ordered matching; returns ``(tp, fp, fn)``."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    matched = _greedy_match([p.box for p in preds], [p.confidence for p in preds], gts, iou_threshold)
    tp = sum(m is not None for m in matched)
    return tp, len(preds) - tp, len(gts) - tp


def precision_recall(tp: int, fp: int, fn: int) -> Tuple[float, float]:
    """Precision and recall with fixed conventions for empty denominators.

    No predictions: precision is 0 if ground truth exists, else 1. No
    ground truth: recall is 1.
    """
    if tp + fp == 0:
        precision = 0.0 if fn > 0 else 1.0
    else:
        precision = tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


def _score_sample(sample: EvalSample, result: PipelineResult, iou_threshold: float):
    readings = list(result.plates)
    gts = [g.box for g in sample.plates]
    matched = _greedy_match([r.plate_box for r in readings], [r.plate_confidence for r in readings],
                            gts, iou_threshold)
    tp = sum(m is not None for m in matched)
    correct = 0
    for g in sample.plates:
        if any(r.text == g.text and iou(r.plate_box, g.box) >= iou_threshold for r in readings):
            correct += 1
    return tp, len(readings) - tp, len(gts) - tp, correct


def evaluate_pipeline(dataset: Sequence[EvalSample], cfg: PipelineConfig, backends: Backends,
                      iou_threshold: float = EVAL_IOU, jobs: int = 1) -> EvalReport:
    if len(dataset) == 0:
        raise EmptySet("evaluation dataset is empty")

    def one(sample: EvalSample) -> PipelineResult:
        try:
            return run(sample.image, cfg, active)
        except BackendFailure as exc:
            raise BackendFailure(f"{sample.name}: {exc}", stage=exc.stage) from exc

    if jobs > 1:
        active = backends.serialized()
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, dataset))
    else:
        active = backends
        results = [one(s) for s in dataset]

    tp = fp = fn = correct = total = deblurred = 0
    sums = {s: 0.0 for s in STAGES}
    for sample, result in zip(dataset, results):
        a, b, c, ok = _score_sample(sample, result, iou_threshold)
        tp, fp, fn, correct = tp + a, fp + b, fn + c, correct + ok
        total += len(sample.plates)
        deblurred += result.deblur_applied
        for s in STAGES:
            sums[s] += result.stage_times[s]
    precision, recall = precision_recall(tp, fp, fn)
    accuracy = correct / total if total else 1.0
    n = len(dataset)
    return EvalReport(precision, recall, tp, fp, fn, accuracy, correct, total, n, deblurred,
                      {s: v / n for s, v in sums.items()})


@dataclass(frozen=True)
class LatencyStats:
    mean: float
    p95: float
    samples: int

    def to_dict(self):
        return {"mean": self.mean, "p95": self.p95, "samples": self.samples}

    @classmethod
    def of(cls, values: Sequence[float]) -> "LatencyStats":
        arr = np.asarray(values, dtype=np.float64)
        return cls(float(arr.mean()), float(np.percentile(arr, 95)), int(arr.size))


def _table(results: Sequence[PipelineResult]) -> Dict[str, dict]:
    table = {s: LatencyStats.of([r.stage_times[s] for r in results]).to_dict() for s in STAGES}
    table["end_to_end"] = LatencyStats.of([r.total_time for r in results]).to_dict()
    return table


def bench(dataset: Sequence[Image], cfg: PipelineConfig, backends: Backends,
          warmup: int = 1, repeats: int = 3, jobs: int = 1) -> dict:
    """Per-stage wall-clock latency over already-loaded backends.

    Every image goes through ``warmup`` rounds first, reported separately
    under ``cold``, then ``repeats`` rounds under ``warm``. Model loading
    happens before this call and is never timed.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if len(dataset) == 0:
        raise EmptySet("bench dataset is empty")
    cold: List[PipelineResult] = []
    warm: List[PipelineResult] = []
    for _ in range(warmup):
        cold.extend(run_batch(dataset, cfg, backends, jobs))
    for _ in range(repeats):
        warm.extend(run_batch(dataset, cfg, backends, jobs))
    return {
        "images": len(dataset), "warmup": warmup, "repeats": repeats,
        "warm": _table(warm),
        "cold": _table(cold) if cold else None,
    }


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_ground_truth(image_dir, texts_path=None) -> List[EvalSample]:
    """Images with sibling ``.txt`` annotation files plus a JSON text map.

    The map is ``{image file name: [plate text, ...]}`` with texts in the
    same order as the annotation lines. It defaults to ``plates.json``
    inside ``image_dir``.
    """
    image_dir = Path(image_dir)
    texts_path = Path(texts_path) if texts_path else image_dir / "plates.json"
    try:
        texts = json.loads(texts_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read plate texts {texts_path}: {exc}") from exc
    samples = []
    for path in sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        img = load_image(path)
        ann = path.with_suffix(".txt")
        records = read_annotations(ann) if ann.exists() else []
        plate_texts = texts.get(path.name, [])
        if isinstance(plate_texts, str):
            plate_texts = [plate_texts]
        if len(plate_texts) != len(records):
            raise ConfigError(f"{path.name}: {len(records)} boxes but {len(plate_texts)} texts")
        plates = tuple(GroundTruthPlate(denormalize(r, img.width, img.height), t)
                       for r, t in zip(records, plate_texts))
        samples.append(EvalSample(path.name, img, plates))
    if not samples:
        raise EmptySet(f"no images found in {image_dir}")
    return samples
