"""
Detector backend contract and the post-processing around it.

A backend receives a letterboxed frame and returns raw outputs in the
coordinates of that canvas. Two layouts are understood:

* raw head maps, one ``(anchors * (5 + classes), grid_h, grid_w)`` array per
  output scale, holding YOLO logits (decoded here with the spec's anchors);
* decoded candidates, a single ``(N, 5 + classes)`` array of
  ``cx, cy, w, h, objectness, class scores...`` in canvas pixels.

:func:`detect` validates the layout against the :class:`DetectorSpec`,
applies the confidence filter and per-class NMS, and maps surviving boxes
back to source-image pixels.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import BackendFailure, NonPositive, PlatePipelineError, SpecMismatch
from .imaging import BBox, Image, LetterboxTransform, letterbox

__all__ = [
    "Detection", "DetectorSpec", "DetectionConfig", "DetectorInput", "DetectorBackend",
    "head_width", "iou", "iou_matrix", "nms", "decode_outputs", "detect",
    "DEFAULT_ANCHORS", "PLATE_LABELS", "IRANIAN_PLATE_LABELS",
]

# YOLOv5 default anchors (w, h) in input pixels, ordered by stride 8, 16, 32
DEFAULT_ANCHORS = (
    ((10, 13), (16, 30), (33, 23)),
    ((30, 61), (62, 45), (59, 119)),
    ((116, 90), (156, 198), (373, 326)),
)

PLATE_LABELS = ("plate",)

# 10 digits, the 32 Persian letters, and the two service-plate letters
IRANIAN_PLATE_LABELS = tuple("0123456789") + tuple(
    "ابپتثجچحخدذر"
    "زژسشصضطظعغفق"
    "کگلمنوهی"
) + ("D", "S")


def head_width(anchors: int, classes: int) -> int:
    """Channels per output scale: one box (4), objectness (1) and class scores per anchor."""
    if anchors < 1 or classes < 1:
        raise NonPositive(f"anchors and classes must be >= 1, got {anchors}, {classes}")
    return anchors * (4 + 1 + classes)


@dataclass(frozen=True)
class DetectorSpec:
    class_count: int
    class_labels: Tuple[str, ...]
    input_size: int = 640
    anchor_count: int = 3
    anchors: Tuple[Tuple[Tuple[float, float], ...], ...] = DEFAULT_ANCHORS

    def __post_init__(self):
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "anchors", tuple(tuple(tuple(a) for a in s) for s in self.anchors))
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.anchor_count != 3:
            raise ValueError(f"anchor_count must be 3, got {self.anchor_count}")
        if len(self.class_labels) != self.class_count:
            raise ValueError(f"{len(self.class_labels)} labels for {self.class_count} classes")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError("class labels must be unique")
        if self.input_size < 1:
            raise ValueError("input_size must be >= 1")
        if any(len(s) != self.anchor_count for s in self.anchors):
            raise ValueError("every anchor scale needs anchor_count anchors")

    @property
    def head_width(self) -> int:
        return head_width(self.anchor_count, self.class_count)

    @property
    def candidate_width(self) -> int:
        return 5 + self.class_count

    @classmethod
    def plate(cls, input_size: int = 640) -> "DetectorSpec":
        return cls(1, PLATE_LABELS, input_size)

    @classmethod
    def characters(cls, input_size: int = 320) -> "DetectorSpec":
        return cls(len(IRANIAN_PLATE_LABELS), IRANIAN_PLATE_LABELS, input_size)


@dataclass(frozen=True)
class DetectionConfig:
    iou_threshold: float = 0.6
    confidence_threshold: float = 0.3

    def __post_init__(self):
        for name in ("iou_threshold", "confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True)
class Detection:
    box: BBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")

    def to_dict(self):
        return {"box": list(self.box.as_tuple()), "class_id": self.class_id,
                "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d):
        return cls(BBox(*d["box"]), int(d["class_id"]), float(d["confidence"]))


@dataclass(frozen=True)
class DetectorInput:
    """What a backend sees: the letterboxed canvas plus where it came from."""

    image: Image
    source: Image
    transform: LetterboxTransform


class DetectorBackend(Protocol):
    spec: DetectorSpec
    # callers serialize infer() when this is False
    concurrent_safe: bool

    def infer(self, request: DetectorInput) -> Sequence[np.ndarray]: ...


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes: np.ndarray) -> np.ndarray:
    """Pairwise IoU of an ``(n, 4)`` array of ``x_min, y_min, x_max, y_max`` rows."""
    x0, y0, x1, y1 = (boxes[:, i] for i in range(4))
    iw = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    ih = np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :])
    area = (x1 - x0) * (y1 - y0)
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = area[:, None] + area[None, :] - inter
    return inter / union


def _rank_key(d: Detection):
    b = d.box
    return (-d.confidence, d.class_id, b.x_min, b.y_min, b.x_max, b.y_max)


def nms(dets: Sequence[Detection], cfg: DetectionConfig = DetectionConfig()) -> List[Detection]:
    """Confidence filter followed by greedy per-class non-maximum suppression."""
    kept_all: List[Detection] = []
    by_class: Dict[int, List[Detection]] = {}
    for d in dets:
        if d.confidence >= cfg.confidence_threshold:
            by_class.setdefault(d.class_id, []).append(d)
    for group in by_class.values():
        group.sort(key=_rank_key)
        boxes = np.array([d.box.as_tuple() for d in group], dtype=np.float64)
        overlap = iou_matrix(boxes) > cfg.iou_threshold
        suppressed = np.zeros(len(group), dtype=bool)
        for i in range(len(group)):
            if suppressed[i]:
                continue
            kept_all.append(group[i])
            suppressed |= overlap[i]
    kept_all.sort(key=_rank_key)
    return kept_all


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _decode_heads(heads: Sequence[np.ndarray], spec: DetectorSpec) -> np.ndarray:
    if len(heads) != len(spec.anchors):
        raise SpecMismatch(f"expected {len(spec.anchors)} output scales, got {len(heads)}")
    # finest grid pairs with the smallest anchors
    order = sorted(range(len(heads)), key=lambda i: -heads[i].shape[1] * heads[i].shape[2])
    rows = []
    for scale, idx in enumerate(order):
        h = np.asarray(heads[idx], dtype=np.float64)
        a, w5 = spec.anchor_count, spec.candidate_width
        _, gh, gw = h.shape
        stride_y, stride_x = spec.input_size / gh, spec.input_size / gw
        p = _sigmoid(h.reshape(a, w5, gh, gw)).transpose(0, 2, 3, 1)  # (a, gh, gw, 5+C)
        gy, gx = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        anchors = np.asarray(spec.anchors[scale], dtype=np.float64)
        out = p.copy()
        out[..., 0] = (p[..., 0] * 2.0 - 0.5 + gx) * stride_x
        out[..., 1] = (p[..., 1] * 2.0 - 0.5 + gy) * stride_y
        out[..., 2] = (p[..., 2] * 2.0) ** 2 * anchors[:, 0, None, None]
        out[..., 3] = (p[..., 3] * 2.0) ** 2 * anchors[:, 1, None, None]
        rows.append(out.reshape(-1, w5))
    return np.concatenate(rows, axis=0)


def decode_outputs(outputs: Sequence[np.ndarray], spec: DetectorSpec) -> np.ndarray:
    """Validate raw backend outputs against ``spec`` and return ``(N, 5+C)`` candidates."""
    outputs = [np.asarray(o) for o in outputs]
    if not outputs:
        raise SpecMismatch("backend returned no outputs")
    if all(o.ndim == 3 for o in outputs):
        for o in outputs:
            if o.shape[0] != spec.head_width:
                raise SpecMismatch(
                    f"output scale has {o.shape[0]} channels, expected head width {spec.head_width}")
        return _decode_heads(outputs, spec)
    if len(outputs) == 1 and outputs[0].ndim == 2:
        cands = outputs[0]
        if cands.shape[1] != spec.candidate_width:
            raise SpecMismatch(
                f"candidate rows have width {cands.shape[1]}, expected {spec.candidate_width}")
        return cands.astype(np.float64)
    raise SpecMismatch(f"unrecognised output layout: {[o.shape for o in outputs]}")


def _candidates_to_detections(cands: np.ndarray, spec: DetectorSpec, tf: LetterboxTransform,
                              conf_threshold: float) -> List[Detection]:
    if cands.size == 0:
        return []
    cls_scores = cands[:, 5:]
    class_id = np.argmax(cls_scores, axis=1)
    conf = np.clip(cands[:, 4] * cls_scores[np.arange(len(cands)), class_id], 0.0, 1.0)
    dets = []
    for row, c, k in zip(cands, conf, class_id):
        if c < conf_threshold or not np.all(np.isfinite(row[:4])):
            continue
        cx, cy, w, h = row[:4]
        x0, y0, x1, y1 = tf.inverse_coords(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        x0, x1 = max(0.0, x0), min(float(tf.src_width), x1)
        y0, y1 = max(0.0, y0), min(float(tf.src_height), y1)
        if x1 <= x0 or y1 <= y0:
            continue
        dets.append(Detection(BBox(x0, y0, x1, y1), int(k), float(c)))
    return dets


def detect(backend: DetectorBackend, img: Image, cfg: DetectionConfig = DetectionConfig(),
           timings: Optional[Dict[str, float]] = None, stage: Optional[str] = None) -> List[Detection]:
    """Run one detector over ``img`` and return NMS'd detections in source pixels.

    When ``timings`` is given, ``"infer"`` and ``"post"`` seconds are added to it.
    """
    spec = backend.spec
    t0 = time.perf_counter()
    canvas, tf = letterbox(img, spec.input_size, spec.input_size)
    request = DetectorInput(canvas, img, tf)
    try:
        raw = backend.infer(request)
    except PlatePipelineError:
        raise
    except Exception as exc:
        raise BackendFailure(f"detector inference failed: {exc}", stage=stage) from exc
    t1 = time.perf_counter()
    cands = decode_outputs(raw, spec)
    dets = nms(_candidates_to_detections(cands, spec, tf, cfg.confidence_threshold), cfg)
    t2 = time.perf_counter()
    if timings is not None:
        timings["infer"] = timings.get("infer", 0.0) + (t1 - t0)
        timings["post"] = timings.get("post", 0.0) + (t2 - t1)
    return dets
